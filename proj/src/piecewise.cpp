#include "amnet/piecewise.hpp"

#include <stdexcept>
#include <string>

namespace amnet::piecewise {

namespace {
thread_local PatternTape* g_tape = nullptr;
thread_local Mode g_mode = Mode::Off;
}  // namespace

PatternScope::PatternScope(PatternTape& tape, Mode mode) : previous_tape_(g_tape), previous_mode_(g_mode) {
  g_tape = &tape;
  g_mode = mode;
  if (mode == Mode::Record) tape.entries.clear();
  tape.cursor = 0;
}

PatternScope::~PatternScope() {
  g_tape = previous_tape_;
  g_mode = previous_mode_;
}

bool active() { return g_mode != Mode::Off; }

void resolve(std::vector<std::uint8_t>& codes) {
  if (g_mode == Mode::Record) {
    g_tape->entries.push_back(codes);
  } else if (g_mode == Mode::Replay) {
    if (g_tape->cursor >= g_tape->entries.size() || g_tape->entries[g_tape->cursor].size() != codes.size()) {
      throw std::logic_error("piecewise replay diverged from the recorded pass at op " +
                             std::to_string(g_tape->cursor));
    }
    codes = g_tape->entries[g_tape->cursor++];
  }
}

}  // namespace amnet::piecewise
