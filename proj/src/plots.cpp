#include "gmmd/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "gmmd/error.hpp"
#include "gmmd/format.hpp"

namespace gmmd {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
constexpr double kLeft = 70, kRight = 150, kTop = 40, kBottom = 55;

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

const char* colour(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  bool empty() const { return lo > hi; }
};

std::vector<double> nice_ticks(Range& r) {
  if (r.empty()) r = {0.0, 1.0};
  if (r.lo == r.hi) {
    const double pad = r.lo == 0.0 ? 1.0 : std::abs(r.lo) * 0.1;
    r.lo -= pad;
    r.hi += pad;
  }
  const double raw = (r.hi - r.lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (raw <= m * mag) {
      step = m * mag;
      break;
    }
  r.lo = std::floor(r.lo / step) * step;
  r.hi = std::ceil(r.hi / step) * step;
  std::vector<double> ticks;
  for (double t = r.lo; t <= r.hi + step * 1e-9; t += step) ticks.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
  return ticks;
}

std::vector<double> log_ticks(Range& r) {
  if (r.empty()) r = {1.0, 10.0};
  r.lo = std::floor(std::log10(r.lo));
  r.hi = std::ceil(std::log10(r.hi));
  if (r.lo == r.hi) r.hi += 1.0;
  std::vector<double> ticks;
  for (double e = r.lo; e <= r.hi; e += 1.0) ticks.push_back(e);
  return ticks;
}

class Canvas {
 public:
  Canvas(const PlotOptions& o) : o_(o) {
    if (o.width < 200 || o.height < 150) throw InputError("plot size too small");
    out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << o.width << "\" height=\"" << o.height
         << "\" viewBox=\"0 0 " << o.width << " " << o.height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  }

  double plot_w() const { return o_.width - kLeft - kRight; }
  double plot_h() const { return o_.height - kTop - kBottom; }

  void metadata(const std::string& csv) { out_ << "<metadata><![CDATA[\n" << csv << "]]></metadata>\n"; }

  void frame() {
    out_ << "<rect x=\"0\" y=\"0\" width=\"" << o_.width << "\" height=\"" << o_.height << "\" fill=\"white\"/>\n";
    out_ << "<text x=\"" << num(o_.width / 2.0) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
         << xml_escape(o_.title) << "</text>\n";
    out_ << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(plot_w()) << "\" height=\""
         << num(plot_h()) << "\" fill=\"none\" stroke=\"#333\"/>\n";
    out_ << "<text x=\"" << num(kLeft + plot_w() / 2) << "\" y=\"" << num(o_.height - 12.0)
         << "\" text-anchor=\"middle\">" << xml_escape(o_.x_label) << "</text>\n";
    out_ << "<text transform=\"translate(16," << num(kTop + plot_h() / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
         << xml_escape(o_.y_label) << "</text>\n";
  }

  void y_ticks(const std::vector<double>& ticks, const Range& r, bool log) {
    for (double t : ticks) {
      const double y = ypos(t, r);
      out_ << "<line x1=\"" << num(kLeft) << "\" x2=\"" << num(kLeft + plot_w()) << "\" y1=\"" << num(y)
           << "\" y2=\"" << num(y) << "\" stroke=\"#ddd\"/>\n";
      out_ << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">"
           << (log ? "1e" + tick_label(t) : tick_label(t)) << "</text>\n";
    }
  }

  void x_tick(double x, const std::string& label) {
    const double y = kTop + plot_h();
    out_ << "<line x1=\"" << num(x) << "\" x2=\"" << num(x) << "\" y1=\"" << num(y) << "\" y2=\"" << num(y + 4)
         << "\" stroke=\"#333\"/>\n";
    out_ << "<text x=\"" << num(x) << "\" y=\"" << num(y + 16) << "\" text-anchor=\"middle\">" << xml_escape(label)
         << "</text>\n";
  }

  double ypos(double v, const Range& r) const { return kTop + plot_h() * (1.0 - (v - r.lo) / (r.hi - r.lo)); }

  void legend(const std::vector<PlotSeries>& series) {
    for (std::size_t i = 0; i < series.size(); ++i) {
      const double y = kTop + 12 + 16.0 * static_cast<double>(i);
      const double x = kLeft + plot_w() + 12;
      out_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y - 8) << "\" width=\"10\" height=\"10\" fill=\""
           << colour(i) << "\"/>\n";
      out_ << "<text x=\"" << num(x + 15) << "\" y=\"" << num(y + 1) << "\">" << xml_escape(series[i].name)
           << "</text>\n";
    }
  }

  std::ostringstream& raw() { return out_; }

  std::string finish() {
    out_ << "</svg>\n";
    return out_.str();
  }

 private:
  PlotOptions o_;
  std::ostringstream out_;
};

double y_value(double v, bool log) { return log ? std::log10(v) : v; }

bool drawable(double v, bool log) { return std::isfinite(v) && (!log || v > 0.0); }

}  // namespace

std::string svg_line_plot(const PlotOptions& options, const std::vector<PlotSeries>& series) {
  std::ostringstream csv;
  csv << "series,x,y\n";
  Range xr, yr;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw InputError("plot series '" + s.name + "' has mismatched x and y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      csv << csv_field(s.name) << "," << format_double(s.x[i]) << "," << format_double(s.y[i]) << "\n";
      if (!std::isfinite(s.x[i]) || !drawable(s.y[i], options.log_y)) continue;
      xr.add(s.x[i]);
      yr.add(s.y[i]);
    }
  }
  const auto yt = options.log_y ? log_ticks(yr) : nice_ticks(yr);
  const auto xt = nice_ticks(xr);

  Canvas c(options);
  c.metadata(csv.str());
  c.frame();
  c.y_ticks(yt, yr, options.log_y);
  auto xpos = [&](double v) { return kLeft + c.plot_w() * (v - xr.lo) / (xr.hi - xr.lo); };
  for (double t : xt) c.x_tick(xpos(t), tick_label(t));

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    std::string points;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !drawable(s.y[i], options.log_y)) continue;
      const std::string p = num(xpos(s.x[i])) + "," + num(c.ypos(y_value(s.y[i], options.log_y), yr));
      points += (points.empty() ? "" : " ") + p;
      if (s.markers) {
        const auto comma = p.find(',');
        c.raw() << "<circle cx=\"" << p.substr(0, comma) << "\" cy=\"" << p.substr(comma + 1)
                << "\" r=\"3\" fill=\"" << colour(k) << "\"/>\n";
      }
    }
    if (s.line && !points.empty())
      c.raw() << "<polyline fill=\"none\" stroke=\"" << colour(k) << "\" stroke-width=\"1.5\" points=\"" << points
              << "\"/>\n";
  }
  c.legend(series);
  return c.finish();
}

std::string svg_bar_plot(const PlotOptions& options, const std::vector<std::string>& categories,
                         const std::vector<PlotSeries>& series) {
  std::ostringstream csv;
  csv << "category,series,value\n";
  Range yr;
  if (!options.log_y) yr.add(0.0);
  for (const auto& s : series) {
    if (s.y.size() != categories.size())
      throw InputError("bar series '" + s.name + "' needs one value per category");
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      csv << csv_field(categories[i]) << "," << csv_field(s.name) << "," << format_double(s.y[i]) << "\n";
      if (drawable(s.y[i], options.log_y)) yr.add(s.y[i]);
    }
  }
  const auto yt = options.log_y ? log_ticks(yr) : nice_ticks(yr);

  Canvas c(options);
  c.metadata(csv.str());
  c.frame();
  c.y_ticks(yt, yr, options.log_y);
  const double slot = c.plot_w() / static_cast<double>(std::max<std::size_t>(categories.size(), 1));
  const double bar = slot * 0.8 / static_cast<double>(std::max<std::size_t>(series.size(), 1));
  const double base = options.log_y ? kTop + c.plot_h() : c.ypos(0.0, yr);
  for (std::size_t i = 0; i < categories.size(); ++i) {
    c.x_tick(kLeft + slot * (static_cast<double>(i) + 0.5), categories[i]);
    for (std::size_t k = 0; k < series.size(); ++k) {
      const double v = series[k].y[i];
      if (!drawable(v, options.log_y)) continue;
      const double top = c.ypos(y_value(v, options.log_y), yr);
      const double x = kLeft + slot * static_cast<double>(i) + slot * 0.1 + bar * static_cast<double>(k);
      c.raw() << "<rect x=\"" << num(x) << "\" y=\"" << num(std::min(top, base)) << "\" width=\"" << num(bar)
              << "\" height=\"" << num(std::abs(base - top)) << "\" fill=\"" << colour(k) << "\"/>\n";
    }
  }
  c.legend(series);
  return c.finish();
}

}  // namespace gmmd
