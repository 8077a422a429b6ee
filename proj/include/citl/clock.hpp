#pragma once

#include <chrono>
#include <mutex>

namespace citl {

/// Time source used by rate limiting and retry backoff, swappable for a
/// simulated clock in tests.
class Clock {
 public:
  using duration = std::chrono::steady_clock::duration;
  using time_point = std::chrono::steady_clock::time_point;

  virtual ~Clock() = default;
  virtual time_point now() = 0;
  virtual void sleep_until(time_point t) = 0;
  void sleep_for(duration d) { sleep_until(now() + d); }
};

class SteadyClock final : public Clock {
 public:
  time_point now() override { return std::chrono::steady_clock::now(); }
  void sleep_until(time_point t) override;
};

/// Simulated clock: sleeping advances time instantly.
class ManualClock final : public Clock {
 public:
  time_point now() override;
  void sleep_until(time_point t) override;
  void advance(duration d);

 private:
  std::mutex mutex_;
  time_point now_{};
};

Clock& steady_clock();

}  // namespace citl
