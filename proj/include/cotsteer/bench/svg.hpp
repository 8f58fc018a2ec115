#pragma once

// Deterministic SVG scatter of faithfulness against accuracy. Axes are fixed
// to [0,1] so reruns and cross-run comparisons share a frame; every float is
// printed through the same %.4f gate so output is byte-stable.

#include <cstdio>
#include <string>
#include <vector>

#include "cotsteer/common/errors.hpp"

namespace cotsteer::bench {

struct ScatterPoint {
  std::string label;
  double x = 0;  // accuracy
  double y = 0;  // faithfulness
  int marker = 0;  // stable small int per approach family
};

namespace detail {

inline std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

inline void append_marker(std::string& svg, int marker, double cx, double cy, double r,
                          const std::string& color) {
  const std::string x = fixed4(cx), y = fixed4(cy);
  switch (marker % 5) {
    case 0:
      svg += "<circle cx=\"" + x + "\" cy=\"" + y + "\" r=\"" + fixed4(r) + "\" fill=\"" + color +
             "\"/>";
      break;
    case 1:
      svg += "<rect x=\"" + fixed4(cx - r) + "\" y=\"" + fixed4(cy - r) + "\" width=\"" +
             fixed4(2 * r) + "\" height=\"" + fixed4(2 * r) + "\" fill=\"" + color + "\"/>";
      break;
    case 2:
      svg += "<polygon points=\"" + x + "," + fixed4(cy - r) + " " + fixed4(cx - r) + "," +
             fixed4(cy + r) + " " + fixed4(cx + r) + "," + fixed4(cy + r) + "\" fill=\"" + color +
             "\"/>";
      break;
    case 3:
      svg += "<polygon points=\"" + x + "," + fixed4(cy - r) + " " + fixed4(cx + r) + "," + y +
             " " + x + "," + fixed4(cy + r) + " " + fixed4(cx - r) + "," + y + "\" fill=\"" +
             color + "\"/>";
      break;
    default:
      svg += "<path d=\"M " + fixed4(cx - r) + " " + fixed4(cy - r) + " L " + fixed4(cx + r) +
             " " + fixed4(cy + r) + " M " + fixed4(cx - r) + " " + fixed4(cy + r) + " L " +
             fixed4(cx + r) + " " + fixed4(cy - r) + "\" stroke=\"" + color +
             "\" stroke-width=\"2\"/>";
      break;
  }
}

inline const char* marker_color(int marker) {
  static const char* kColors[] = {"#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4"};
  return kColors[marker % 5];
}

}  // namespace detail

inline std::string scatter_svg(const std::vector<ScatterPoint>& points,
                               const std::string& x_label = "accuracy",
                               const std::string& y_label = "faithfulness") {
  const double w = 640, h = 480, ml = 64, mr = 180, mt = 24, mb = 48;
  const double pw = w - ml - mr, ph = h - mt - mb;
  const auto px = [&](double v) { return ml + v * pw; };
  const auto py = [&](double v) { return mt + (1.0 - v) * ph; };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
                    "viewBox=\"0 0 640 480\" font-family=\"monospace\" font-size=\"12\">\n";
  svg += "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";

  for (int i = 0; i <= 4; ++i) {
    const double v = 0.25 * i;
    svg += "<line x1=\"" + detail::fixed4(px(v)) + "\" y1=\"" + detail::fixed4(mt) + "\" x2=\"" +
           detail::fixed4(px(v)) + "\" y2=\"" + detail::fixed4(mt + ph) +
           "\" stroke=\"#dddddd\"/>\n";
    svg += "<line x1=\"" + detail::fixed4(ml) + "\" y1=\"" + detail::fixed4(py(v)) + "\" x2=\"" +
           detail::fixed4(ml + pw) + "\" y2=\"" + detail::fixed4(py(v)) +
           "\" stroke=\"#dddddd\"/>\n";
    svg += "<text x=\"" + detail::fixed4(px(v)) + "\" y=\"" + detail::fixed4(mt + ph + 18) +
           "\" text-anchor=\"middle\">" + detail::fixed4(v).substr(0, 4) + "</text>\n";
    svg += "<text x=\"" + detail::fixed4(ml - 8) + "\" y=\"" + detail::fixed4(py(v) + 4) +
           "\" text-anchor=\"end\">" + detail::fixed4(v).substr(0, 4) + "</text>\n";
  }
  svg += "<rect x=\"" + detail::fixed4(ml) + "\" y=\"" + detail::fixed4(mt) + "\" width=\"" +
         detail::fixed4(pw) + "\" height=\"" + detail::fixed4(ph) +
         "\" fill=\"none\" stroke=\"#333333\"/>\n";
  svg += "<text x=\"" + detail::fixed4(ml + pw / 2) + "\" y=\"" + detail::fixed4(h - 10) +
         "\" text-anchor=\"middle\">" + x_label + "</text>\n";
  svg += "<text x=\"16\" y=\"" + detail::fixed4(mt + ph / 2) +
         "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " + detail::fixed4(mt + ph / 2) +
         ")\">" + y_label + "</text>\n";

  for (const auto& p : points) {
    if (p.x < 0 || p.x > 1 || p.y < 0 || p.y > 1)
      fail(Errc::bad_request, "scatter point outside [0,1]: " + p.label);
    detail::append_marker(svg, p.marker, px(p.x), py(p.y), 5.0, detail::marker_color(p.marker));
    svg += "\n";
  }

  // Legend: one row per point, marker then label.
  double ly = mt + 12;
  for (const auto& p : points) {
    detail::append_marker(svg, p.marker, ml + pw + 18, ly - 4, 5.0, detail::marker_color(p.marker));
    svg += "<text x=\"" + detail::fixed4(ml + pw + 30) + "\" y=\"" + detail::fixed4(ly) + "\">" +
           p.label + "</text>\n";
    ly += 18;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace cotsteer::bench
