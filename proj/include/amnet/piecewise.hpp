#pragma once

#include <cstdint>
#include <vector>

namespace amnet::piecewise {

/// Branch choices of the piecewise ops (relu, clamp, |x| in the distance
/// volume, smooth-L1), one entry per op call in forward order.
struct PatternTape {
  std::vector<std::vector<std::uint8_t>> entries;
  std::size_t cursor = 0;
};

enum class Mode { Off, Record, Replay };

/// While alive, piecewise ops on this thread record their branches into the
/// tape or replay the recorded ones, so repeated forward passes evaluate the
/// same smooth piece of the network function.
class PatternScope {
 public:
  PatternScope(PatternTape& tape, Mode mode);
  ~PatternScope();
  PatternScope(const PatternScope&) = delete;
  PatternScope& operator=(const PatternScope&) = delete;

 private:
  PatternTape* previous_tape_;
  Mode previous_mode_;
};

bool active();

/// Takes the natural branch codes of one op call. Record appends them,
/// Replay overwrites them with the next recorded entry.
void resolve(std::vector<std::uint8_t>& codes);

}  // namespace amnet::piecewise
