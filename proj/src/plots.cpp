#include "bavae/plots.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace bavae {

namespace {

const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

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

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

}  // namespace

void write_svg_chart(const std::filesystem::path& path, const ChartSpec& spec, const std::vector<Series>& series) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("series '" + s.name + "' has mismatched x/y lengths");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 <= 0) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 <= 0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;

  const double left = 70, right = 150, top = 40, bottom = 50;
  const double w = spec.width - left - right, h = spec.height - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * w; };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * h; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\"" << spec.height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << left + w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(spec.title)
      << "</text>\n";
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << w << "\" height=\"" << h
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    svg << "<text x=\"" << px(xv) << "\" y=\"" << top + h + 16 << "\" text-anchor=\"middle\">" << fmt(xv)
        << "</text>\n";
    svg << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
  }
  svg << "<text x=\"" << left + w / 2 << "\" y=\"" << spec.height - 10 << "\" text-anchor=\"middle\">"
      << escape(spec.x_label) << "</text>\n";
  svg << "<text transform=\"translate(16," << top + h / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(spec.y_label) << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % std::size(kPalette)];
    if (!spec.markers_only && s.x.size() > 1) {
      svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i)
        if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) svg << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
      svg << "\"/>\n";
    }
    if (spec.markers_only || s.x.size() == 1) {
      for (std::size_t i = 0; i < s.x.size(); ++i)
        if (std::isfinite(s.x[i]) && std::isfinite(s.y[i]))
          svg << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"4\" fill=\"" << color
              << "\"/>\n";
    }
    const double ly = top + 10 + 18.0 * static_cast<double>(si);
    svg << "<rect x=\"" << left + w + 12 << "\" y=\"" << ly - 8 << "\" width=\"12\" height=\"10\" fill=\"" << color
        << "\"/>\n";
    svg << "<text x=\"" << left + w + 30 << "\" y=\"" << ly + 1 << "\">" << escape(s.name) << "</text>\n";
  }
  svg << "</svg>\n";

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << svg.str();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_kl_plot(const std::filesystem::path& path, const TrainingLog& log) {
  std::vector<Series> series;
  if (!log.records.empty()) {
    const std::size_t l = log.records.front().per_dim_kl.size();
    for (std::size_t d = 0; d < l; ++d) {
      Series s{"z" + std::to_string(d), {}, {}};
      for (const auto& r : log.records) {
        s.x.push_back(static_cast<double>(r.step));
        s.y.push_back(d < r.per_dim_kl.size() ? r.per_dim_kl[d] : std::nan(""));
      }
      series.push_back(std::move(s));
    }
  }
  write_svg_chart(path, {"KL per latent dimension", "step", "KL (nats)"}, series);
}

void write_hyper_plot(const std::filesystem::path& path, const TrainingLog& log) {
  Series elbo{"ELBO", {}, {}}, distortion{"distortion", {}, {}};
  for (const auto& r : log.records) {
    elbo.x.push_back(r.hyper);
    elbo.y.push_back(r.elbo);
    distortion.x.push_back(r.hyper);
    distortion.y.push_back(r.distortion);
  }
  write_svg_chart(path, {"ELBO and distortion during training", "hyperparameter", "nats", true}, {elbo, distortion});
}

void write_rd_scatter(const std::filesystem::path& path, const std::vector<RDPoint>& points) {
  std::map<double, Series> by_value;
  std::string kind = "beta";
  for (const auto& p : points) {
    kind = to_string(p.hyper_kind);
    auto& s = by_value[p.hyper_value];
    s.name = kind + "=" + fmt(p.hyper_value);
    s.x.push_back(p.rate);
    s.y.push_back(p.distortion);
  }
  std::vector<Series> series;
  for (auto& [v, s] : by_value) series.push_back(std::move(s));
  write_svg_chart(path, {"Rate-distortion (held-out)", "rate (nats)", "distortion (nats)", true}, series);
}

void write_sweep_plot(const std::filesystem::path& path, const Lemma1Report& report) {
  Series elbo{"median ELBO", report.values, {}}, distortion{"median distortion", report.values, report.median_distortion};
  for (std::size_t i = 0; i < report.values.size(); ++i) {
    elbo.y.push_back(-(report.median_rate[i] + report.median_distortion[i]));
  }
  write_svg_chart(path, {"ELBO and distortion across the sweep", to_string(report.kind), "nats"}, {elbo, distortion});
}

void write_traversal_png(const std::filesystem::path& path, const Traversals& t, int side, const std::vector<bool>& dead) {
  const int rows = static_cast<int>(t.per_dim.size());
  const int cols = static_cast<int>(t.grid.size());
  if (rows == 0 || cols == 0) throw std::invalid_argument("empty traversal");
  const int gap = 1;
  cv::Mat canvas(rows * (side + gap) - gap, cols * (side + gap) - gap, CV_8UC1, cv::Scalar(128));
  for (int d = 0; d < rows; ++d) {
    const auto& frames = t.per_dim[static_cast<std::size_t>(d)];
    if (frames.rows() < side * side || frames.cols() != cols) throw std::invalid_argument("traversal frame shape mismatch");
    const bool grey = static_cast<std::size_t>(d) < dead.size() && dead[static_cast<std::size_t>(d)];
    for (int g = 0; g < cols; ++g) {
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
          double v = std::clamp(frames(y * side + x, g), 0.0, 1.0);
          if (grey) v = 0.35 * v + 0.65 * 0.5;
          canvas.at<std::uint8_t>(d * (side + gap) + y, g * (side + gap) + x) =
              static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
      }
    }
  }
  if (!cv::imwrite(path.string(), canvas)) throw std::runtime_error("cannot write " + path.string());
}

void write_npy(const std::filesystem::path& path, const std::vector<double>& data, const std::vector<std::size_t>& shape) {
  static_assert(std::endian::native == std::endian::little, "npy writer assumes a little-endian host");
  std::size_t count = 1;
  for (auto s : shape) count *= s;
  if (count != data.size()) throw std::invalid_argument("npy shape does not match data size");
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) header += (i ? ", " : "") + std::to_string(shape[i]);
  if (shape.size() == 1) header += ',';
  header += "), }";
  const std::size_t total = 10 + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header += '\n';
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  const unsigned char len_bytes[2] = {static_cast<unsigned char>(len & 0xff), static_cast<unsigned char>(len >> 8)};
  out.write(reinterpret_cast<const char*>(len_bytes), 2);
  out << header;
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace bavae
