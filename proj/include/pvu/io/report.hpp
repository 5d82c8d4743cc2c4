#pragma once

// MetricsReport text document and loss-curve CSV.
//
// One `key = value` pair per line, keys in a fixed order:
//   report.version, task, samples
//   action:  mAcc, classes_present, class.<k>.{name,support,accuracy}
//   pose:    mpjpe_mm, baseline_mpjpe_mm
//   flow.{epe,acc_strict,acc_relax,outlier,points}      (when flow is present)
//   seg.{miou,parts_present}, seg.iou.<part>             (when labels are present)
//   loss.{steps,first,last}                              (when a curve is attached)
// Undefined values (absent classes) are written as `nan`.

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pvu/error.hpp"
#include "pvu/io/binary.hpp"
#include "pvu/train/metrics.hpp"

namespace pvu::io {

inline constexpr int kReportVersion = 1;

class MetricsReport {
 public:
  void set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries_)
      if (k == key) {
        v = value;
        return;
      }
    entries_.emplace_back(key, value);
  }
  void set(const std::string& key, double value) {
    std::ostringstream os;
    os.precision(9);
    if (std::isnan(value))
      os << "nan";
    else
      os << value;
    set(key, os.str());
  }
  void set(const std::string& key, std::size_t value) { set(key, std::to_string(value)); }

  bool has(const std::string& key) const {
    for (const auto& e : entries_)
      if (e.first == key) return true;
    return false;
  }
  const std::string& get(const std::string& key) const {
    for (const auto& e : entries_)
      if (e.first == key) return e.second;
    fail(ErrorCode::InvalidArgument, "report has no key '" + key + "'");
  }
  double number(const std::string& key) const {
    const auto& v = get(key);
    if (v == "nan") return std::nan("");
    try {
      return std::stod(v);
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidArgument, "report key '" + key + "' is not numeric");
    }
  }
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string text() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
    return out;
  }

  static MetricsReport parse(const std::string& text) {
    MetricsReport r;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) fail(ErrorCode::InvalidArgument, "report: malformed line '" + line + "'");
      r.entries_.emplace_back(line.substr(0, eq), line.substr(eq + 3));
    }
    return r;
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

inline MetricsReport new_report(const std::string& task, std::size_t samples) {
  MetricsReport r;
  r.set("report.version", std::to_string(kReportVersion));
  r.set("task", task);
  r.set("samples", samples);
  return r;
}

inline void add_action(MetricsReport& r, const train::ClassAccuracy& acc, const std::vector<std::string>& names) {
  r.set("mAcc", acc.mean);
  r.set("classes_present", acc.present);
  for (std::size_t k = 0; k < acc.per_class.size(); ++k) {
    const auto p = "class." + std::to_string(k);
    r.set(p + ".name", k < names.size() ? names[k] : std::to_string(k));
    r.set(p + ".support", acc.support[k]);
    r.set(p + ".accuracy", acc.per_class[k]);
  }
}

inline void add_pose(MetricsReport& r, double mpjpe_mm, double baseline_mm) {
  r.set("mpjpe_mm", mpjpe_mm);
  r.set("baseline_mpjpe_mm", baseline_mm);
}

inline void add_flow(MetricsReport& r, const train::FlowScores& f) {
  r.set("flow.epe", f.epe);
  r.set("flow.acc_strict", f.acc_strict);
  r.set("flow.acc_relax", f.acc_relax);
  r.set("flow.outlier", f.outlier);
  r.set("flow.points", f.count);
}

inline void add_segmentation(MetricsReport& r, const train::IoUScores& s, const std::vector<std::string>& parts) {
  r.set("seg.miou", s.mean);
  r.set("seg.parts_present", s.present);
  for (std::size_t c = 0; c < s.per_class.size(); ++c)
    r.set("seg.iou." + (c < parts.size() ? parts[c] : std::to_string(c)), s.per_class[c]);
}

inline void add_loss(MetricsReport& r, const std::vector<double>& curve) {
  r.set("loss.steps", curve.size());
  if (!curve.empty()) {
    r.set("loss.first", curve.front());
    r.set("loss.last", curve.back());
  }
}

/// Loss curve as `step,loss` rows with a header line.
inline std::string curve_csv(const std::vector<double>& curve) {
  std::ostringstream os;
  os.precision(9);
  os << "step,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) os << i << ',' << curve[i] << '\n';
  return os.str();
}

inline void write_report(const std::string& path, const MetricsReport& r) { write_text(path, r.text()); }

}  // namespace pvu::io
