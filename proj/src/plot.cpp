#include "ahl/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace ahl {

namespace {

constexpr double kWidth = 720, kHeight = 420;
constexpr double kLeft = 70, kRight = 170, kTop = 40, kBottom = 60;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#17becf"};
constexpr const char* kDashes[] = {"", "6 4", "2 3", "10 3 2 3"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
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

struct Series {
  std::size_t run = 0;
  std::size_t landmark = 0;
  std::vector<double> x, y;
};

std::string render(const std::string& title, const std::string& x_label, const std::string& y_label,
                   const std::vector<Series>& series, std::span<const PlotRun> runs,
                   const std::vector<std::string>& names) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  std::size_t landmarks = 0;
  for (const auto& s : series) {
    landmarks = std::max(landmarks, s.landmark + 1);
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y0 -= 1, y1 += 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;

  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  const auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  const auto py = [&](double y) { return kTop + (y1 - y) / (y1 - y0) * ph; };

  std::string svg;
  svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kWidth) + "\" height=\"" + fmt(kHeight) +
         "\" viewBox=\"0 0 " + fmt(kWidth) + " " + fmt(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fmt(kLeft + pw / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + escape(title) +
         "</text>\n";

  // Axes with five ticks each.
  svg += "<g class=\"axes\" stroke=\"black\" fill=\"none\">\n";
  svg += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(kTop + ph) + "\" x2=\"" + fmt(kLeft + pw) + "\" y2=\"" +
         fmt(kTop + ph) + "\"/>\n";
  svg += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(kTop) + "\" x2=\"" + fmt(kLeft) + "\" y2=\"" + fmt(kTop + ph) +
         "\"/>\n";
  svg += "</g>\n<g class=\"ticks\" fill=\"black\">\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
    svg += "<text x=\"" + fmt(px(xv)) + "\" y=\"" + fmt(kTop + ph + 18) + "\" text-anchor=\"middle\">" + fmt(xv) +
           "</text>\n";
    svg += "<text x=\"" + fmt(kLeft - 6) + "\" y=\"" + fmt(py(yv) + 4) + "\" text-anchor=\"end\">" + fmt(yv) +
           "</text>\n";
  }
  svg += "</g>\n";
  svg += "<text class=\"xlabel\" x=\"" + fmt(kLeft + pw / 2) + "\" y=\"" + fmt(kHeight - 18) +
         "\" text-anchor=\"middle\">" + escape(x_label) + "</text>\n";
  svg += "<text class=\"ylabel\" x=\"18\" y=\"" + fmt(kTop + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
         fmt(kTop + ph / 2) + ")\">" + escape(y_label) + "</text>\n";

  for (const auto& s : series) {
    const char* colour = kPalette[s.landmark % std::size(kPalette)];
    const char* dash = kDashes[s.run % std::size(kDashes)];
    svg += "<g class=\"trace\" data-run=\"" + std::to_string(s.run) + "\" data-landmark=\"" +
           std::to_string(s.landmark) + "\">\n<polyline fill=\"none\" stroke=\"" + colour + "\" stroke-width=\"1.5\"";
    if (*dash) svg += std::string(" stroke-dasharray=\"") + dash + "\"";
    svg += " points=\"";
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (k) svg += ' ';
      svg += fmt(px(s.x[k])) + "," + fmt(py(s.y[k]));
    }
    svg += "\"/>\n</g>\n";
  }

  // Legend: landmarks by colour, runs by dash.
  svg += "<g class=\"legend\">\n";
  double ly = kTop + 10;
  const double lx = kLeft + pw + 15;
  for (std::size_t i = 0; i < landmarks; ++i, ly += 18) {
    const std::string name = i < names.size() ? names[i] : "landmark " + std::to_string(i);
    svg += "<line x1=\"" + fmt(lx) + "\" y1=\"" + fmt(ly) + "\" x2=\"" + fmt(lx + 22) + "\" y2=\"" + fmt(ly) +
           "\" stroke=\"" + kPalette[i % std::size(kPalette)] + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + fmt(lx + 28) + "\" y=\"" + fmt(ly + 4) + "\">" + escape(name) + "</text>\n";
  }
  if (runs.size() > 1) {
    ly += 8;
    for (std::size_t r = 0; r < runs.size(); ++r, ly += 18) {
      svg += "<line x1=\"" + fmt(lx) + "\" y1=\"" + fmt(ly) + "\" x2=\"" + fmt(lx + 22) + "\" y2=\"" + fmt(ly) +
             "\" stroke=\"black\" stroke-width=\"1.5\"";
      const char* dash = kDashes[r % std::size(kDashes)];
      if (*dash) svg += std::string(" stroke-dasharray=\"") + dash + "\"";
      svg += "/>\n<text x=\"" + fmt(lx + 28) + "\" y=\"" + fmt(ly + 4) + "\">" + escape(runs[r].label) + "</text>\n";
    }
  }
  svg += "</g>\n</svg>\n";
  return svg;
}

}  // namespace

std::string sigma_curves_svg(std::span<const PlotRun> runs, const std::vector<std::string>& names) {
  std::vector<Series> series;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const auto& sigma = runs[r].artifacts.sigma;
    const std::size_t n = sigma.empty() ? 0 : sigma.front().size();
    for (std::size_t i = 0; i < n; ++i) {
      Series s{r, i, {}, {}};
      for (std::size_t t = 0; t < sigma.size(); ++t) {
        s.x.push_back(static_cast<double>(t));
        s.y.push_back(sigma[t][i]);
      }
      series.push_back(std::move(s));
    }
  }
  return render("Gaussian sigma per landmark", "iteration", "sigma (px)", series, runs, names);
}

std::string reward_curves_svg(std::span<const PlotRun> runs, const std::vector<std::string>& names) {
  std::vector<Series> series;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const auto traces = reward_traces(runs[r].artifacts);
    for (std::size_t i = 0; i < traces.size(); ++i) {
      Series s{r, i, {}, {}};
      for (std::size_t t = 0; t < traces[i].size(); ++t) {
        s.x.push_back(static_cast<double>(t + 1));
        s.y.push_back(traces[i][t]);
      }
      series.push_back(std::move(s));
    }
  }
  return render("Mean reward per landmark", "iteration", "reward (C - error)", series, runs, names);
}

}  // namespace ahl
