#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace r2nn {

enum class SignalUnit { Volt, Ampere, Newton, None };

// Uniformly sampled real-valued series.
struct Signal {
  double rate = 0.0;  // Hz
  std::vector<double> samples;
  SignalUnit unit = SignalUnit::Volt;

  std::size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / rate; }
  // Throws InvalidParameter on a non-positive rate or non-finite sample.
  void validate() const;
};

}  // namespace r2nn
