#include "hass/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "hass/errors.hpp"

namespace hass {

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (const auto& row : counts) {
    for (std::size_t v : row) n += v;
  }
  return n;
}

std::size_t ConfusionMatrix::diagonal() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < kStageCount; ++i) n += counts[i][i];
  return n;
}

ConfusionMatrix confusion(const std::vector<SleepStage>& truth,
                          const std::vector<SleepStage>& predicted) {
  if (truth.empty()) throw ConfigError("confusion: empty label lists");
  if (truth.size() != predicted.size()) {
    throw ConfigError("confusion: " + std::to_string(truth.size()) + " true labels vs " +
                      std::to_string(predicted.size()) + " predictions");
  }
  ConfusionMatrix m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    m.counts[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])]++;
  }
  return m;
}

MetricsReport metrics_from_confusion(const ConfusionMatrix& m) {
  const std::size_t total = m.total();
  if (total == 0) throw ConfigError("metrics: empty confusion matrix");

  MetricsReport report;
  report.n_epochs = total;
  report.accuracy = static_cast<double>(m.diagonal()) / static_cast<double>(total);

  double f1_sum = 0.0;
  for (std::size_t k = 0; k < kStageCount; ++k) {
    std::size_t tp = m.counts[k][k];
    std::size_t fp = 0, fn = 0;
    for (std::size_t j = 0; j < kStageCount; ++j) {
      if (j == k) continue;
      fp += m.counts[j][k];
      fn += m.counts[k][j];
    }
    const double precision = (tp + fp) ? static_cast<double>(tp) / (tp + fp) : 0.0;
    const double recall = (tp + fn) ? static_cast<double>(tp) / (tp + fn) : 0.0;
    const double f1 =
        (precision + recall > 0.0) ? 2.0 * precision * recall / (precision + recall) : 0.0;
    report.per_stage_f1[k] = f1;
    report.degenerate[k] = (tp + fp + fn) == 0;
    f1_sum += f1;
  }
  report.overall_f1 = f1_sum / static_cast<double>(kStageCount);
  return report;
}

namespace {

std::string fmt3(double v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace

std::string render_report(const std::vector<ReportRow>& rows) {
  std::size_t tag_width = 8;
  for (const ReportRow& r : rows) tag_width = std::max(tag_width, r.model_tag.size());

  std::ostringstream out;
  out << std::string(tag_width, ' ') << "  HASS  F1     Acc    W      N1     N2     N3     REM\n";
  std::array<bool, kStageCount> degenerate_any{};
  for (const ReportRow& r : rows) {
    out << r.model_tag << std::string(tag_width - r.model_tag.size(), ' ');
    out << (r.hass ? "  Yes   " : "  No    ");
    out << fmt3(r.metrics.overall_f1) << "  " << fmt3(r.metrics.accuracy);
    for (std::size_t k = 0; k < kStageCount; ++k) {
      out << "  " << fmt3(r.metrics.per_stage_f1[k]);
      if (r.metrics.degenerate[k]) degenerate_any[k] = true;
    }
    out << "\n";
  }
  bool any = false;
  for (bool d : degenerate_any) any |= d;
  if (any) {
    out << "note: F1 reported as 0 for stages absent from both truth and prediction:";
    for (std::size_t k = 0; k < kStageCount; ++k) {
      if (degenerate_any[k]) out << " " << kStageNames[k];
    }
    out << "\n";
  }
  return out.str();
}

std::string emit_report_kv(const MetricsReport& report, const std::string& prefix) {
  std::ostringstream out;
  char buf[32];
  auto put = [&](const std::string& key, double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << prefix << "." << key << " = " << buf << "\n";
  };
  out << prefix << ".n_epochs = " << report.n_epochs << "\n";
  put("accuracy", report.accuracy);
  put("overall_f1", report.overall_f1);
  for (std::size_t k = 0; k < kStageCount; ++k) {
    put(std::string("f1.") + kStageNames[k], report.per_stage_f1[k]);
  }
  return out.str();
}

}  // namespace hass
