#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "weylkdv/io.hpp"

namespace weylkdv {

/// Structured result of a check: named measurements against thresholds, free
/// notes, and an optional verdict string.
struct DiagnosticsReport {
  struct Entry {
    std::string name;
    double value = 0.0;
    double threshold = 0.0;
    bool passed = true;
    std::string detail;
  };

  std::string title;
  std::vector<Entry> entries;
  std::vector<std::string> notes;
  std::string verdict;

  Entry& add(std::string name, double value, double threshold, bool passed, std::string detail = {}) {
    entries.push_back({std::move(name), value, threshold, passed, std::move(detail)});
    return entries.back();
  }
  /// Records value <= threshold.
  Entry& add_upper(std::string name, double value, double threshold, std::string detail = {}) {
    return add(std::move(name), value, threshold, value <= threshold, std::move(detail));
  }
  /// Records value >= threshold.
  Entry& add_lower(std::string name, double value, double threshold, std::string detail = {}) {
    return add(std::move(name), value, threshold, value >= threshold, std::move(detail));
  }

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
  double value(const std::string& name) const {
    const Entry* e = find(name);
    if (!e) throw InvalidInput("report has no entry named " + name);
    return e->value;
  }
  bool all_passed() const {
    for (const auto& e : entries)
      if (!e.passed) return false;
    return true;
  }

  Json to_json() const {
    Json j;
    j["title"] = title;
    j["verdict"] = verdict;
    j["entries"] = Json::array();
    for (const auto& e : entries) {
      Json je{{"name", e.name}, {"passed", e.passed}, {"detail", e.detail}};
      je["value"] = std::isfinite(e.value) ? Json(e.value) : Json(format_double(e.value));
      je["threshold"] = std::isfinite(e.threshold) ? Json(e.threshold) : Json(format_double(e.threshold));
      j["entries"].push_back(std::move(je));
    }
    j["notes"] = notes;
    return j;
  }
};

}  // namespace weylkdv
