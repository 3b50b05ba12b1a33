#include "dyncap/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dyncap {

std::int64_t round_half_up_width(double x) {
  const std::int64_t w = static_cast<std::int64_t>(std::floor(x + 0.5));
  return w < 1 ? 1 : w;
}

void CapacitySchedule::validate() const {
  if (total_steps < 1) throw std::invalid_argument("CapacitySchedule: total_steps must be positive");
  if (update_interval < 1) throw std::invalid_argument("CapacitySchedule: update_interval must be positive");
  if (base_widths.empty()) throw std::invalid_argument("CapacitySchedule: base widths not set");
  for (auto w : base_widths) {
    if (w < 1) throw std::invalid_argument("CapacitySchedule: base widths must be positive");
  }
  switch (mode) {
    case ScheduleMode::kIncrease:
      if (!(coeff_start <= coeff_end && coeff_end <= 0.0 && 1.0 + coeff_start > 0.0)) {
        throw std::invalid_argument("CapacitySchedule: increase mode needs start <= end <= 0 with 1+start > 0");
      }
      break;
    case ScheduleMode::kDecrease:
      if (!(1.0 >= coeff_start && coeff_start >= coeff_end && coeff_end > 0.0)) {
        throw std::invalid_argument("CapacitySchedule: decrease mode needs 1 >= start >= end > 0");
      }
      break;
    case ScheduleMode::kFixed:
      if (coeff_start != coeff_end) {
        throw std::invalid_argument("CapacitySchedule: fixed mode needs a constant coefficient");
      }
      if (1.0 + coeff_start <= 0.0) {
        throw std::invalid_argument("CapacitySchedule: fixed coefficient must keep widths positive");
      }
      break;
  }
}

double coefficient_at(const CapacitySchedule& schedule, std::int64_t step) {
  if (step < 0) throw std::invalid_argument("coefficient_at: step must be nonnegative");
  if (schedule.mode == ScheduleMode::kFixed) return schedule.coeff_start;
  if (step >= schedule.total_steps) return schedule.coeff_end;
  const std::int64_t held = (step / schedule.update_interval) * schedule.update_interval;
  const double t = static_cast<double>(held) / static_cast<double>(schedule.total_steps);
  return schedule.coeff_start + (schedule.coeff_end - schedule.coeff_start) * t;
}

std::vector<std::int64_t> widths_at(const CapacitySchedule& schedule, std::int64_t step) {
  const double c = coefficient_at(schedule, step);
  std::vector<std::int64_t> widths(schedule.base_widths.size());
  for (std::size_t l = 0; l < schedule.base_widths.size(); ++l) {
    const double base = static_cast<double>(schedule.base_widths[l]);
    if (schedule.mode == ScheduleMode::kDecrease) {
      const bool excluded =
          std::find(schedule.excluded_layers.begin(), schedule.excluded_layers.end(),
                    static_cast<std::int64_t>(l)) != schedule.excluded_layers.end();
      widths[l] = excluded ? schedule.base_widths[l] : round_half_up_width(c * base);
    } else {
      widths[l] = round_half_up_width((1.0 + c) * base);
    }
    if (widths[l] > schedule.base_widths[l]) widths[l] = schedule.base_widths[l];
  }
  return widths;
}

CapacityEvent capacity_event_at(const CapacitySchedule& schedule, std::int64_t step) {
  if (step < 0) throw std::invalid_argument("capacity_event_at: step must be nonnegative");
  CapacityEvent event;
  switch (schedule.mode) {
    case ScheduleMode::kFixed:
      break;
    case ScheduleMode::kDecrease:
      event.kind = CapacityEvent::Kind::kResampleMask;
      event.beta = coefficient_at(schedule, step);
      break;
    case ScheduleMode::kIncrease: {
      if (step == 0) break;
      auto now = widths_at(schedule, step);
      if (now != widths_at(schedule, step - 1)) {
        event.kind = CapacityEvent::Kind::kGrow;
        event.widths = std::move(now);
      }
      break;
    }
  }
  return event;
}

}  // namespace dyncap
