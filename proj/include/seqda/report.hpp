#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "seqda/config.hpp"

namespace seqda::report {

inline constexpr const char* kVersion = "0.1.0";

struct Series {
  std::string name;
  std::vector<double> y;
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

inline constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
inline constexpr double kW = 640, kH = 400, kL = 60, kR = 160, kT = 40, kB = 50;

}  // namespace detail

/// Standalone SVG line chart of several series over a shared x axis.
inline std::string line_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                             const std::vector<double>& x, const std::vector<Series>& series) {
  using namespace detail;
  double x0 = x.empty() ? 0 : x.front(), x1 = x.empty() ? 1 : x.back();
  double y0 = std::numeric_limits<double>::infinity(), y1 = -y0;
  for (const auto& s : series)
    for (double v : s.y)
      if (std::isfinite(v)) y0 = std::min(y0, v), y1 = std::max(y1, v);
  if (!std::isfinite(y0)) y0 = 0, y1 = 1;
  if (y1 - y0 < 1e-12) y1 = y0 + 1;
  if (x1 - x0 < 1e-12) x1 = x0 + 1;
  const double pw = kW - kL - kR, ph = kH - kT - kB;
  auto px = [&](double v) { return kL + (v - x0) / (x1 - x0) * pw; };
  auto py = [&](double v) { return kT + ph - (v - y0) / (y1 - y0) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title) << "</text>\n";
  o << "<rect x=\"" << kL << "\" y=\"" << kT << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0, xv = x0 + (x1 - x0) * i / 4.0;
    o << "<text x=\"" << kL - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << num(yv)
      << "</text>\n";
    o << "<text x=\"" << px(xv) << "\" y=\"" << kT + ph + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
      << num(xv) << "</text>\n";
  }
  o << "<text x=\"" << kL + pw / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\" font-size=\"12\">"
    << escape(xlabel) << "</text>\n";
  o << "<text x=\"16\" y=\"" << kT + ph / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
    << kT + ph / 2 << ")\">" << escape(ylabel) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % std::size(kColors)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < std::min(x.size(), series[s].y.size()); ++i)
      if (std::isfinite(series[s].y[i])) o << num(px(x[i])) << ',' << num(py(series[s].y[i])) << ' ';
    o << "\"/>\n";
    const double ly = kT + 14 + 18 * static_cast<double>(s);
    o << "<line x1=\"" << kW - kR + 12 << "\" y1=\"" << ly << "\" x2=\"" << kW - kR + 32 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << kW - kR + 36 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">" << escape(series[s].name)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

/// Standalone SVG bar chart.
inline std::string bar_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                             const std::vector<std::string>& labels, const std::vector<double>& values) {
  using namespace detail;
  double top = 0;
  for (double v : values) top = std::max(top, v);
  if (top <= 0) top = 1;
  const double pw = kW - kL - 30, ph = kH - kT - kB;
  const double slot = labels.empty() ? pw : pw / static_cast<double>(labels.size());
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title) << "</text>\n";
  o << "<line x1=\"" << kL << "\" y1=\"" << kT + ph << "\" x2=\"" << kL + pw << "\" y2=\"" << kT + ph
    << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double h = values[i] / top * ph, x = kL + slot * static_cast<double>(i);
    o << "<rect x=\"" << num(x + slot * 0.1) << "\" y=\"" << num(kT + ph - h) << "\" width=\"" << num(slot * 0.8)
      << "\" height=\"" << num(h) << "\" fill=\"" << kColors[0] << "\"/>\n";
    o << "<text x=\"" << num(x + slot / 2) << "\" y=\"" << kT + ph + 16
      << "\" text-anchor=\"middle\" font-size=\"11\">" << escape(labels[i]) << "</text>\n";
    o << "<text x=\"" << num(x + slot / 2) << "\" y=\"" << num(kT + ph - h - 4)
      << "\" text-anchor=\"middle\" font-size=\"10\">" << num(values[i]) << "</text>\n";
  }
  o << "<text x=\"" << kL + pw / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\" font-size=\"12\">"
    << escape(xlabel) << "</text>\n";
  o << "<text x=\"16\" y=\"" << kT + ph / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
    << kT + ph / 2 << ")\">" << escape(ylabel) << "</text>\n";
  o << "</svg>\n";
  return o.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

}  // namespace seqda::report
