#pragma once

// Minimal SVG figures: a row of panels, each with histogram bars, scatter
// points and polylines in data coordinates.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sbmmd/error.hpp"

namespace sbmmd::svg {

struct Bars {
  double lo = 0.0;
  double width = 1.0;
  std::vector<double> heights;
  std::string color = "#4c72b0";
};

struct Points {
  std::vector<double> x, y;
  std::string color = "#4c72b0";
  double radius = 1.2;
  double opacity = 0.6;
};

struct Line {
  std::vector<double> x, y;
  std::string color = "#dd8452";
  std::string label;
};

struct Panel {
  std::string title;
  double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
  bool log_y = false;
  std::vector<Bars> bars;
  std::vector<Points> points;
  std::vector<Line> lines;
};

class Figure {
 public:
  Figure(double panel_width = 288, double panel_height = 216) : pw_(panel_width), ph_(panel_height) {}

  Panel& add_panel(Panel p) {
    panels_.push_back(std::move(p));
    return panels_.back();
  }

  std::string render() const {
    require(!panels_.empty(), "figure has no panels");
    std::ostringstream os;
    os.precision(6);
    const double W = pw_ * static_cast<double>(panels_.size());
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << ph_ << "\" viewBox=\"0 0 "
       << W << ' ' << ph_ << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t i = 0; i < panels_.size(); ++i) render_panel(os, panels_[i], pw_ * static_cast<double>(i));
    os << "</svg>\n";
    return os.str();
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << render();
  }

 private:
  static constexpr double kMargin = 32.0;

  void render_panel(std::ostringstream& os, const Panel& p, double x0) const {
    const double left = x0 + kMargin, right = x0 + pw_ - 8.0, top = 20.0, bottom = ph_ - 22.0;
    auto ty = [&](double y) {
      if (p.log_y) y = std::log10(std::max(y, 1e-300));
      return y;
    };
    const double ylo = ty(p.y_min), yhi = ty(p.y_max);
    auto sx = [&](double x) { return left + (x - p.x_min) / (p.x_max - p.x_min) * (right - left); };
    auto sy = [&](double y) { return bottom - (ty(y) - ylo) / (yhi - ylo) * (bottom - top); };
    auto clip = [](double v, double a, double b) { return std::clamp(v, std::min(a, b), std::max(a, b)); };

    os << "<g>\n<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << right - left << "\" height=\""
       << bottom - top << "\" fill=\"none\" stroke=\"#444\" stroke-width=\"0.8\"/>\n";
    os << "<text x=\"" << (left + right) / 2 << "\" y=\"14\" font-size=\"11\" text-anchor=\"middle\" "
       << "font-family=\"sans-serif\">" << p.title << "</text>\n";
    os << "<text x=\"" << left << "\" y=\"" << ph_ - 8 << "\" font-size=\"9\" font-family=\"sans-serif\">" << p.x_min
       << "</text>\n";
    os << "<text x=\"" << right << "\" y=\"" << ph_ - 8 << "\" font-size=\"9\" text-anchor=\"end\" "
       << "font-family=\"sans-serif\">" << p.x_max << "</text>\n";
    os << "<text x=\"" << left - 3 << "\" y=\"" << bottom << "\" font-size=\"9\" text-anchor=\"end\" "
       << "font-family=\"sans-serif\">" << p.y_min << "</text>\n";
    os << "<text x=\"" << left - 3 << "\" y=\"" << top + 8 << "\" font-size=\"9\" text-anchor=\"end\" "
       << "font-family=\"sans-serif\">" << p.y_max << "</text>\n";

    for (const Bars& b : p.bars) {
      for (std::size_t k = 0; k < b.heights.size(); ++k) {
        const double a = b.lo + b.width * static_cast<double>(k);
        if (a + b.width < p.x_min || a > p.x_max || !(b.heights[k] > 0.0)) continue;
        const double xa = clip(sx(a), left, right), xb = clip(sx(a + b.width), left, right);
        const double yt = clip(sy(b.heights[k]), top, bottom);
        os << "<rect x=\"" << xa << "\" y=\"" << yt << "\" width=\"" << std::max(xb - xa, 0.0) << "\" height=\""
           << bottom - yt << "\" fill=\"" << b.color << "\" fill-opacity=\"0.7\"/>\n";
      }
    }
    for (const Points& pts : p.points) {
      for (std::size_t k = 0; k < pts.x.size(); ++k) {
        const double px = sx(pts.x[k]), py = sy(pts.y[k]);
        if (px < left || px > right || py < top || py > bottom) continue;
        os << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"" << pts.radius << "\" fill=\"" << pts.color
           << "\" fill-opacity=\"" << pts.opacity << "\"/>\n";
      }
    }
    double legend_y = top + 12.0;
    for (const Line& l : p.lines) {
      os << "<polyline fill=\"none\" stroke=\"" << l.color << "\" stroke-width=\"1.2\" points=\"";
      for (std::size_t k = 0; k < l.x.size(); ++k) {
        if (!std::isfinite(l.y[k])) continue;
        os << clip(sx(l.x[k]), left, right) << ',' << clip(sy(l.y[k]), top, bottom) << ' ';
      }
      os << "\"/>\n";
      if (!l.label.empty()) {
        os << "<text x=\"" << right - 4 << "\" y=\"" << legend_y << "\" font-size=\"9\" text-anchor=\"end\" fill=\""
           << l.color << "\" font-family=\"sans-serif\">" << l.label << "</text>\n";
        legend_y += 11.0;
      }
    }
    os << "</g>\n";
  }

  double pw_, ph_;
  std::vector<Panel> panels_;
};

inline std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace sbmmd::svg
