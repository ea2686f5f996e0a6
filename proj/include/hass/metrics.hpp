#pragma once

#include <array>
#include <string>
#include <vector>

#include "hass/dataset.hpp"

namespace hass {

// 5x5 confusion counts: rows = true stage, columns = predicted stage.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, kStageCount>, kStageCount> counts{};

  std::size_t total() const;
  std::size_t diagonal() const;
};

struct MetricsReport {
  double overall_f1 = 0.0;  // unweighted (macro) mean of the per-stage F1
  double accuracy = 0.0;
  std::array<double, kStageCount> per_stage_f1{};
  std::size_t n_epochs = 0;
  // Stages absent from both truth and prediction; their F1 is 0 by
  // convention and the report carries a footnote.
  std::array<bool, kStageCount> degenerate{};
};

ConfusionMatrix confusion(const std::vector<SleepStage>& truth,
                          const std::vector<SleepStage>& predicted);

MetricsReport metrics_from_confusion(const ConfusionMatrix& m);

struct ReportRow {
  std::string model_tag;
  bool hass = false;
  MetricsReport metrics;
};

// Fixed-width text table with paired Yes/No rows: overall F1, accuracy and
// the five per-stage F1 scores, three decimals each.
std::string render_report(const std::vector<ReportRow>& rows);

// Flat machine-readable form, one "prefix.path = value" per line.
std::string emit_report_kv(const MetricsReport& report, const std::string& prefix);

}  // namespace hass
