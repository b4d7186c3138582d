#include "saenet/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace saenet {

template <typename T>
GradCheckReport<T> grad_check(CheckTarget<T>& target, T tolerance, Rng& rng, T h) {
  GradCheckReport<T> report;
  report.tolerance = tolerance;

  ForwardResult<T> fwd;
  bool smooth = false;
  for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
    reset_kink_hits();
    fwd = target.forward();
    if (kink_hits() == 0) {
      smooth = true;
      break;
    }
    if (!target.resample) break;
    target.resample(rng);
    ++report.resamples;
  }
  if (!smooth) {
    report.failure = "no sample clear of relu/pool kinks after " +
                     std::to_string(kMaxResamples) + " attempts";
    return report;
  }

  backward(fwd.loss);

  std::vector<Tensor<T>> analytic;
  analytic.reserve(fwd.leaves.size());
  for (const auto& leaf : fwd.leaves)
    analytic.push_back(leaf.has_grad() ? leaf.grad().clone()
                                       : Tensor<T>(leaf.value().shape()));

  const T floor = static_cast<T>(kFdFloor);
  for (size_t li = 0; li < target.leaf_values.size(); ++li) {
    GradCheckEntry<T> entry;
    entry.name = target.leaf_names[li];
    Tensor<T>& value = *target.leaf_values[li];
    for (int64_t i = 0; i < value.numel(); ++i) {
      const T orig = value[i];
      value[i] = orig + h;
      const T up = target.forward().loss.value()[0];
      value[i] = orig - h;
      const T down = target.forward().loss.value()[0];
      value[i] = orig;
      const T fd = (up - down) / (T(2) * h);
      const T a = analytic[li][i];
      if (!std::isfinite(fd) || !std::isfinite(a)) {
        entry.finite = false;
        if (report.failure.empty()) {
          report.failure = "non-finite gradient for " + entry.name + "[" + std::to_string(i) +
                           "]";
        }
        continue;
      }
      const T rel = std::abs(a - fd) / std::max(std::abs(fd), floor);
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }

  bool all_finite = true;
  for (const auto& e : report.entries) all_finite = all_finite && e.finite;
  report.pass = all_finite && report.max_rel_err <= tolerance;
  if (!report.pass && report.failure.empty()) {
    for (const auto& e : report.entries) {
      if (e.max_rel_err > tolerance) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.3e", static_cast<double>(e.max_rel_err));
        report.failure = e.name + " exceeds tolerance: max rel err " + buf;
        break;
      }
    }
  }
  return report;
}

template <typename T>
std::string format_report(const GradCheckReport<T>& report, const std::string& target_name) {
  std::ostringstream out;
  char buf[64];
  for (const auto& e : report.entries) {
    std::snprintf(buf, sizeof(buf), "%.3e", static_cast<double>(e.max_rel_err));
    out << "  " << e.name << ": max rel err " << buf << (e.finite ? "" : " (non-finite)")
        << "\n";
  }
  std::snprintf(buf, sizeof(buf), "%.3e", static_cast<double>(report.max_rel_err));
  out << target_name << ": " << (report.pass ? "PASS" : "FAIL") << " (max rel err " << buf
      << ", tol " << static_cast<double>(report.tolerance) << ")";
  if (!report.failure.empty()) out << "\n  " << report.failure;
  return out.str();
}

template GradCheckReport<float> grad_check(CheckTarget<float>&, float, Rng&, float);
template GradCheckReport<double> grad_check(CheckTarget<double>&, double, Rng&, double);
template std::string format_report(const GradCheckReport<float>&, const std::string&);
template std::string format_report(const GradCheckReport<double>&, const std::string&);

} // namespace saenet
