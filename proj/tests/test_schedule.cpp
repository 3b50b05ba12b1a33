#include <doctest.h>

#include <stdexcept>
#include <vector>

#include "dyncap/schedule.hpp"

using namespace dyncap;

namespace {

CapacitySchedule increase_schedule(std::int64_t total, std::int64_t n = 1,
                                   std::vector<std::int64_t> base = {8}) {
  CapacitySchedule s;
  s.mode = ScheduleMode::kIncrease;
  s.coeff_start = -0.5;
  s.coeff_end = 0.0;
  s.total_steps = total;
  s.update_interval = n;
  s.base_widths = std::move(base);
  s.validate();
  return s;
}

CapacitySchedule decrease_schedule(std::int64_t total, std::int64_t n = 1,
                                   std::vector<std::int64_t> base = {8},
                                   std::vector<std::int64_t> excluded = {}) {
  CapacitySchedule s;
  s.mode = ScheduleMode::kDecrease;
  s.coeff_start = 1.0;
  s.coeff_end = 0.5;
  s.total_steps = total;
  s.update_interval = n;
  s.base_widths = std::move(base);
  s.excluded_layers = std::move(excluded);
  s.validate();
  return s;
}

}  // namespace

TEST_CASE("coefficient endpoints and linear midpoint") {
  CapacitySchedule s = increase_schedule(1000);
  CHECK(coefficient_at(s, 0) == -0.5);
  CHECK(coefficient_at(s, 500) == doctest::Approx(-0.25).epsilon(1e-15));
  CHECK(coefficient_at(s, 1000) == 0.0);
  CHECK(coefficient_at(s, 5000) == 0.0);
  CHECK_THROWS_AS(coefficient_at(s, -1), std::invalid_argument);
}

TEST_CASE("coefficient quantizes to update-interval boundaries") {
  CapacitySchedule s = decrease_schedule(1000, 10);
  for (std::int64_t step = 0; step <= 9; ++step) {
    CHECK(coefficient_at(s, step) == 1.0);
  }
  CHECK(coefficient_at(s, 10) < 1.0);

  // constant on each [k*n, (k+1)*n) interval strictly inside the ramp
  for (std::int64_t k = 0; k < 99; ++k) {
    const double held = coefficient_at(s, k * 10);
    for (std::int64_t off = 1; off < 10; ++off) {
      CHECK(coefficient_at(s, k * 10 + off) == held);
    }
  }
}

TEST_CASE("endpoint exactness beats quantization for every interval") {
  for (std::int64_t n : {1, 7, 64}) {
    CapacitySchedule inc = increase_schedule(1000, n, {64, 64, 64});
    CHECK(coefficient_at(inc, 0) == -0.5);
    CHECK(coefficient_at(inc, 1000) == 0.0);
    CHECK(widths_at(inc, 0) == std::vector<std::int64_t>{32, 32, 32});
    CHECK(widths_at(inc, 1000) == std::vector<std::int64_t>{64, 64, 64});

    CapacitySchedule dec = decrease_schedule(1000, n, {64, 64, 64});
    CHECK(coefficient_at(dec, 0) == 1.0);
    CHECK(coefficient_at(dec, 1000) == 0.5);
    CHECK(widths_at(dec, 0) == std::vector<std::int64_t>{64, 64, 64});
    CHECK(widths_at(dec, 1000) == std::vector<std::int64_t>{32, 32, 32});
  }
}

TEST_CASE("widths follow the coefficient with round-half-up") {
  CapacitySchedule s = increase_schedule(1000, 1, {8, 16, 32});
  CHECK(widths_at(s, 0) == std::vector<std::int64_t>{4, 8, 16});
  CHECK(widths_at(s, 1000) == std::vector<std::int64_t>{8, 16, 32});

  CapacitySchedule dec = decrease_schedule(1000, 1, {8, 8}, {0});
  CapacitySchedule probe = dec;
  probe.coeff_start = probe.coeff_end = 0.75;
  probe.mode = ScheduleMode::kDecrease;
  CHECK(widths_at(probe, 0) == std::vector<std::int64_t>{8, 6});  // excluded layer keeps base

  CHECK(round_half_up_width(4.5) == 5);
  CHECK(round_half_up_width(4.49) == 4);
  CHECK(round_half_up_width(0.2) == 1);  // clamp to 1
}

TEST_CASE("monotonic widths along each mode") {
  CapacitySchedule inc = increase_schedule(307, 3, {8, 16, 32});
  auto prev = widths_at(inc, 0);
  for (std::int64_t step = 1; step <= 307; ++step) {
    auto now = widths_at(inc, step);
    for (std::size_t l = 0; l < now.size(); ++l) CHECK(now[l] >= prev[l]);
    prev = now;
  }
  CapacitySchedule dec = decrease_schedule(307, 3, {8, 16, 32});
  prev = widths_at(dec, 0);
  for (std::int64_t step = 1; step <= 307; ++step) {
    auto now = widths_at(dec, step);
    for (std::size_t l = 0; l < now.size(); ++l) CHECK(now[l] <= prev[l]);
    prev = now;
  }
}

TEST_CASE("increase mode emits exactly the width-change events") {
  CapacitySchedule s = increase_schedule(1000);  // base 8: 4 -> 8
  int grow_events = 0;
  for (std::int64_t step = 0; step < 1000; ++step) {
    const CapacityEvent e = capacity_event_at(s, step);
    if (e.kind == CapacityEvent::Kind::kGrow) ++grow_events;
  }
  CHECK(grow_events == 4);
  CHECK(capacity_event_at(s, 0).kind == CapacityEvent::Kind::kNone);
  CHECK(capacity_event_at(s, 2000).kind == CapacityEvent::Kind::kNone);
}

TEST_CASE("event replay reconstructs widths at every step") {
  CapacitySchedule s = increase_schedule(513, 5, {8, 16, 32});
  auto widths = widths_at(s, 0);
  for (std::int64_t step = 0; step <= 513; ++step) {
    const CapacityEvent e = capacity_event_at(s, step);
    if (e.kind == CapacityEvent::Kind::kGrow) widths = e.widths;
    CHECK(widths == widths_at(s, step));
  }
}

TEST_CASE("decrease mode resamples every iteration with the live coefficient") {
  CapacitySchedule s = decrease_schedule(100);
  for (std::int64_t step : {0, 1, 50, 99, 100, 500}) {
    const CapacityEvent e = capacity_event_at(s, step);
    CHECK(e.kind == CapacityEvent::Kind::kResampleMask);
    CHECK(e.beta == coefficient_at(s, step));
  }
}

TEST_CASE("fixed mode is inert") {
  CapacitySchedule s;
  s.mode = ScheduleMode::kFixed;
  s.coeff_start = s.coeff_end = -0.5;
  s.total_steps = 100;
  s.base_widths = {64, 64, 64};
  s.validate();
  CHECK(widths_at(s, 0) == std::vector<std::int64_t>{32, 32, 32});
  CHECK(widths_at(s, 99) == std::vector<std::int64_t>{32, 32, 32});
  CHECK(capacity_event_at(s, 3).kind == CapacityEvent::Kind::kNone);
}

TEST_CASE("schedule validation rejects bad coefficient ranges") {
  CapacitySchedule s;
  s.base_widths = {8};
  s.total_steps = 10;

  s.mode = ScheduleMode::kIncrease;
  s.coeff_start = 0.1;
  s.coeff_end = 0.2;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.coeff_start = -1.0;
  s.coeff_end = 0.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);

  s.mode = ScheduleMode::kDecrease;
  s.coeff_start = 0.5;
  s.coeff_end = 1.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.coeff_start = 1.0;
  s.coeff_end = 0.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);

  s.mode = ScheduleMode::kFixed;
  s.coeff_start = 0.0;
  s.coeff_end = -0.5;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}
