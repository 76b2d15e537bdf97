#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flowmix/metrics.hpp"
#include "flowmix/training.hpp"

namespace flowmix {

/// Round-trippable double formatting ("%.17g"); keeps emitted CSV/JSON
/// byte-identical across reruns.
std::string fmt_double(double v);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

/// Deterministic epoch CSV (wall times deliberately excluded; they go to the
/// separate timing log).
void write_epoch_csv(const std::string& path, const std::vector<EpochRecord>& records);
void write_timing_log(const std::string& path, const std::vector<EpochRecord>& records);
void write_mix_log_csv(const std::string& path, const std::vector<MixLogEntry>& entries);

std::string metrics_report_to_json(const MetricsReport& report);
void write_metrics_csv(const std::string& path, const MetricsReport& report);

struct SvgSeries {
  std::string name;
  std::vector<double> values;  // NaN entries break the polyline
};

/// Minimal static line chart; x positions are the value indices labelled by
/// `x_labels` when provided.
void write_svg_line_chart(const std::string& path, const std::string& title, const std::vector<std::string>& x_labels,
                          const std::vector<SvgSeries>& series);

}  // namespace flowmix
