#pragma once

// Minimal SVG plots: a heatmap of scalar values on a grid, polylines and
// markers in data coordinates, and a framed axis box with range labels.

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "stgeo/io.hpp"

namespace stgeo {

class SvgPlot {
 public:
  SvgPlot(double x_lo, double x_hi, double y_lo, double y_hi, std::string x_label, std::string y_label,
          int width = 640, int height = 480)
      : x_lo_(x_lo), x_hi_(x_hi), y_lo_(y_lo), y_hi_(y_hi), w_(width), h_(height) {
    if (!(x_hi > x_lo) || !(y_hi > y_lo)) throw DomainError("svg: empty plot range");
    labels_ = {std::move(x_label), std::move(y_label)};
  }

  /// Grayscale heatmap of f on an nx-by-ny cell grid; higher values are darker.
  /// Non-finite values are left blank.
  void heatmap(const std::function<double(double, double)>& f, int nx = 120, int ny = 90) {
    std::vector<double> v(static_cast<std::size_t>(nx * ny));
    double lo = INFINITY, hi = -INFINITY;
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const double x = x_lo_ + (x_hi_ - x_lo_) * (i + 0.5) / nx;
        const double y = y_lo_ + (y_hi_ - y_lo_) * (j + 0.5) / ny;
        const double z = f(x, y);
        v[static_cast<std::size_t>(j * nx + i)] = z;
        if (std::isfinite(z)) {
          lo = std::min(lo, z);
          hi = std::max(hi, z);
        }
      }
    }
    if (!(hi > lo)) hi = lo + 1;
    const double cw = plot_w() / nx, ch = plot_h() / ny;
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const double z = v[static_cast<std::size_t>(j * nx + i)];
        if (!std::isfinite(z)) continue;
        const int g = static_cast<int>(std::lround(255 - 200 * (z - lo) / (hi - lo)));
        body_ << "<rect x=\"" << fmt(kMargin + i * cw) << "\" y=\"" << fmt(kMargin + plot_h() - (j + 1) * ch)
              << "\" width=\"" << fmt(cw + 0.3) << "\" height=\"" << fmt(ch + 0.3) << "\" fill=\"rgb(" << g << ','
              << g << ',' << g << ")\"/>\n";
      }
    }
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color, double stroke = 2.0,
                double opacity = 1.0) {
    if (pts.empty()) return;
    body_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << fmt(stroke)
          << "\" stroke-opacity=\"" << fmt(opacity) << "\" points=\"";
    for (const auto& [x, y] : pts) body_ << fmt(px(x)) << ',' << fmt(py(y)) << ' ';
    body_ << "\"/>\n";
  }

  void marker(double x, double y, const std::string& color, double r = 4.0) {
    body_ << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y)) << "\" r=\"" << fmt(r) << "\" fill=\""
          << color << "\"/>\n";
  }

  void legend(const std::string& text, const std::string& color) {
    const double y = kMargin + 16.0 * (static_cast<double>(legend_rows_++) + 1);
    body_ << "<text x=\"" << fmt(kMargin + 8) << "\" y=\"" << fmt(y) << "\" font-size=\"12\" fill=\"" << color
          << "\">" << escape(text) << "</text>\n";
  }

  std::string str() const {
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w_ << "\" height=\"" << h_ << "\" viewBox=\"0 0 "
       << w_ << ' ' << h_ << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << body_.str() << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << fmt(plot_w())
       << "\" height=\"" << fmt(plot_h()) << "\" fill=\"none\" stroke=\"black\"/>\n";
    const double base = kMargin + plot_h();
    os << label(kMargin, base + 16, "start", format_double(x_lo_))
       << label(kMargin + plot_w(), base + 16, "end", format_double(x_hi_))
       << label(kMargin + plot_w() / 2, base + 32, "middle", labels_[0])
       << label(kMargin - 6, base, "end", format_double(y_lo_))
       << label(kMargin - 6, kMargin + 10, "end", format_double(y_hi_))
       << label(kMargin - 6, kMargin + plot_h() / 2, "end", labels_[1]) << "</svg>\n";
    return os.str();
  }

 private:
  static constexpr double kMargin = 56.0;

  double plot_w() const { return w_ - 2 * kMargin; }
  double plot_h() const { return h_ - 2 * kMargin; }
  double px(double x) const { return kMargin + plot_w() * (x - x_lo_) / (x_hi_ - x_lo_); }
  double py(double y) const { return kMargin + plot_h() * (1 - (y - y_lo_) / (y_hi_ - y_lo_)); }

  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
  }

  static std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
      if (c == '<') out += "&lt;";
      else if (c == '>') out += "&gt;";
      else if (c == '&') out += "&amp;";
      else out += c;
    }
    return out;
  }

  static std::string label(double x, double y, const char* anchor, const std::string& text) {
    return "<text x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" font-size=\"12\" text-anchor=\"" + anchor + "\">" +
           escape(text) + "</text>\n";
  }

  double x_lo_, x_hi_, y_lo_, y_hi_;
  int w_, h_;
  std::vector<std::string> labels_;
  std::ostringstream body_;
  int legend_rows_ = 0;
};

}  // namespace stgeo
