#pragma once

#include <cstdint>
#include <vector>

namespace dyncap {

enum class ScheduleMode { kIncrease, kDecrease, kFixed };

// Maps the training step to per-layer active widths. In increase/fixed
// mode the coefficient is a signed offset from full capacity
// (width = round-half-up((1+c) * base)); in decrease mode it is the kept
// fraction (width = round-half-up(c * base) on non-excluded layers).
struct CapacitySchedule {
  ScheduleMode mode = ScheduleMode::kFixed;
  double coeff_start = 0.0;
  double coeff_end = 0.0;
  std::int64_t total_steps = 1;
  std::int64_t update_interval = 1;               // the coefficient moves every n steps
  std::vector<std::int64_t> excluded_layers;      // decrease mode only
  std::vector<std::int64_t> base_widths;

  void validate() const;
};

// Width rounding rule shared by schedules and mask sampling:
// round-half-up, clamped to a minimum of 1.
std::int64_t round_half_up_width(double x);

// Linear interpolation of the coefficient over [0, total_steps], held
// constant on each [k*n, (k+1)*n) interval and clamped to the end value
// from total_steps onward (the endpoint wins over quantization).
double coefficient_at(const CapacitySchedule& schedule, std::int64_t step);

// Active output width per trunk layer at `step`.
std::vector<std::int64_t> widths_at(const CapacitySchedule& schedule, std::int64_t step);

struct CapacityEvent {
  enum class Kind { kNone, kGrow, kResampleMask };
  Kind kind = Kind::kNone;
  std::vector<std::int64_t> widths;  // kGrow: target widths
  double beta = 1.0;                 // kResampleMask: current coefficient
};

// Increase mode: a grow event exactly when widths_at changes from step-1
// to step (never at step 0; the starting widths are applied at setup).
// Decrease mode: a resample event every step. Fixed mode: none.
CapacityEvent capacity_event_at(const CapacitySchedule& schedule, std::int64_t step);

}  // namespace dyncap
