#include "flowmix/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace flowmix {

using nlohmann::json;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << content;
  if (!os) throw IoError("write failed for " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_epoch_csv(const std::string& path, const std::vector<EpochRecord>& records) {
  std::ostringstream os;
  os << "epoch,train_loss,valid_loss,lr,valid_indicator,test_indicator\n";
  for (const auto& r : records) {
    os << r.epoch << "," << fmt_double(r.train_loss) << "," << fmt_double(r.valid_loss) << "," << fmt_double(r.lr)
       << "," << fmt_double(r.valid_indicator) << "," << fmt_double(r.test_indicator) << "\n";
  }
  write_text_file(path, os.str());
}

void write_timing_log(const std::string& path, const std::vector<EpochRecord>& records) {
  std::ostringstream os;
  os << "# wall-clock seconds per epoch; not covered by the determinism contract\n";
  for (const auto& r : records) os << r.epoch << " " << fmt_double(r.wall_time_s) << "\n";
  write_text_file(path, os.str());
}

void write_mix_log_csv(const std::string& path, const std::vector<MixLogEntry>& entries) {
  std::ostringstream os;
  os << "step,state,p\n";
  for (const auto& e : entries) os << e.step << "," << e.state << "," << fmt_double(e.p) << "\n";
  write_text_file(path, os.str());
}

std::string metrics_report_to_json(const MetricsReport& report) {
  json j;
  j["threshold"] = report.threshold;
  j["mean_auc"] = report.mean_auc;
  j["macro_f1"] = report.macro;
  j["classes"] = json::array();
  for (std::size_t c = 0; c < report.per_class_f1.size(); ++c) {
    json row;
    row["name"] = c < report.class_names.size() ? report.class_names[c] : "class_" + std::to_string(c);
    if (report.per_class_auc[c]) {
      row["auc"] = *report.per_class_auc[c];
    } else {
      row["auc"] = nullptr;  // degenerate class, excluded from the mean
    }
    row["f1"] = report.per_class_f1[c];
    row["tp"] = report.tp[c];
    row["fp"] = report.fp[c];
    row["fn"] = report.fn[c];
    j["classes"].push_back(row);
  }
  return j.dump(2) + "\n";
}

void write_metrics_csv(const std::string& path, const MetricsReport& report) {
  std::ostringstream os;
  os << "class,auc,f1,tp,fp,fn\n";
  for (std::size_t c = 0; c < report.per_class_f1.size(); ++c) {
    os << (c < report.class_names.size() ? report.class_names[c] : "class_" + std::to_string(c)) << ",";
    os << (report.per_class_auc[c] ? fmt_double(*report.per_class_auc[c]) : "undefined") << ",";
    os << fmt_double(report.per_class_f1[c]) << "," << report.tp[c] << "," << report.fp[c] << "," << report.fn[c]
       << "\n";
  }
  write_text_file(path, os.str());
}

void write_svg_line_chart(const std::string& path, const std::string& title, const std::vector<std::string>& x_labels,
                          const std::vector<SvgSeries>& series) {
  const int width = 720, height = 420;
  const int ml = 60, mr = 20, mt = 40, mb = 60;
  const double plot_w = width - ml - mr;
  const double plot_h = height - mt - mb;

  std::size_t points = 0;
  double lo = 0.0, hi = 1.0;
  bool any = false;
  for (const auto& s : series) {
    points = std::max(points, s.values.size());
    for (double v : s.values) {
      if (!std::isfinite(v)) continue;
      if (!any) {
        lo = hi = v;
        any = true;
      } else {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  if (!any || hi <= lo) {
    hi = any ? hi + 0.5 : 1.0;
    lo = any ? lo - 0.5 : 0.0;
  }

  auto x_of = [&](std::size_t i) {
    return points <= 1 ? ml + plot_w / 2 : ml + plot_w * static_cast<double>(i) / static_cast<double>(points - 1);
  };
  auto y_of = [&](double v) { return mt + plot_h * (1.0 - (v - lo) / (hi - lo)); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + plot_h
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt + plot_h << "\" x2=\"" << ml + plot_w << "\" y2=\"" << mt + plot_h
     << "\" stroke=\"black\"/>\n";
  for (int g = 0; g <= 4; ++g) {
    const double v = lo + (hi - lo) * g / 4.0;
    const double y = y_of(v);
    os << "<text x=\"" << ml - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << fmt_double(v)
       << "</text>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << y << "\" x2=\"" << ml + plot_w << "\" y2=\"" << y
       << "\" stroke=\"#dddddd\"/>\n";
  }
  for (std::size_t i = 0; i < x_labels.size() && i < points; ++i) {
    os << "<text x=\"" << x_of(i) << "\" y=\"" << mt + plot_h + 16
       << "\" text-anchor=\"middle\" font-size=\"9\" transform=\"rotate(30 " << x_of(i) << " " << mt + plot_h + 16
       << ")\">" << x_labels[i] << "</text>\n";
  }

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % 6];
    std::ostringstream pts;
    bool open = false;
    for (std::size_t i = 0; i < series[s].values.size(); ++i) {
      const double v = series[s].values[i];
      if (!std::isfinite(v)) {
        if (open) {
          os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"" << pts.str()
             << "\"/>\n";
          pts.str("");
          open = false;
        }
        continue;
      }
      pts << x_of(i) << "," << y_of(v) << " ";
      open = true;
    }
    if (open) {
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"" << pts.str()
         << "\"/>\n";
    }
    os << "<text x=\"" << ml + 8 << "\" y=\"" << mt + 14 + 14 * static_cast<double>(s) << "\" font-size=\"11\" fill=\""
       << color << "\">" << series[s].name << "</text>\n";
  }
  os << "</svg>\n";
  write_text_file(path, os.str());
}

}  // namespace flowmix
