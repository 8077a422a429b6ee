#include "citl/clock.hpp"

#include <thread>

namespace citl {

void SteadyClock::sleep_until(time_point t) { std::this_thread::sleep_until(t); }

Clock::time_point ManualClock::now() {
  std::lock_guard lock(mutex_);
  return now_;
}

void ManualClock::sleep_until(time_point t) {
  std::lock_guard lock(mutex_);
  if (t > now_) now_ = t;
}

void ManualClock::advance(duration d) {
  std::lock_guard lock(mutex_);
  now_ += d;
}

Clock& steady_clock() {
  static SteadyClock clock;
  return clock;
}

}  // namespace citl
