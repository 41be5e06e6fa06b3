/*
 * longiseg: longitudinal MS lesion segmentation toolkit
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "longiseg/plot.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace longiseg {

namespace {

// 5x7 bitmap glyphs; '#' marks set pixels.
const std::map<char, std::array<const char*, 7>>& glyphs() {
  static const std::map<char, std::array<const char*, 7>> table = {
      {'0', {" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "}},
      {'1', {"  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "}},
      {'2', {" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"}},
      {'3', {" ### ", "#   #", "    #", "  ## ", "    #", "#   #", " ### "}},
      {'4', {"   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "}},
      {'5', {"#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "}},
      {'6', {" ### ", "#    ", "#    ", "#### ", "#   #", "#   #", " ### "}},
      {'7', {"#####", "    #", "   # ", "  #  ", "  #  ", "  #  ", "  #  "}},
      {'8', {" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "}},
      {'9', {" ### ", "#   #", "#   #", " ####", "    #", "    #", " ### "}},
      {'A', {" ### ", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"}},
      {'B', {"#### ", "#   #", "#   #", "#### ", "#   #", "#   #", "#### "}},
      {'C', {" ### ", "#   #", "#    ", "#    ", "#    ", "#   #", " ### "}},
      {'D', {"#### ", "#   #", "#   #", "#   #", "#   #", "#   #", "#### "}},
      {'E', {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#####"}},
      {'F', {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#    "}},
      {'G', {" ### ", "#   #", "#    ", "# ###", "#   #", "#   #", " ### "}},
      {'H', {"#   #", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"}},
      {'I', {" ### ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "}},
      {'J', {"  ###", "   # ", "   # ", "   # ", "   # ", "#  # ", " ##  "}},
      {'K', {"#   #", "#  # ", "# #  ", "##   ", "# #  ", "#  # ", "#   #"}},
      {'L', {"#    ", "#    ", "#    ", "#    ", "#    ", "#    ", "#####"}},
      {'M', {"#   #", "## ##", "# # #", "# # #", "#   #", "#   #", "#   #"}},
      {'N', {"#   #", "##  #", "# # #", "#  ##", "#   #", "#   #", "#   #"}},
      {'O', {" ### ", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "}},
      {'P', {"#### ", "#   #", "#   #", "#### ", "#    ", "#    ", "#    "}},
      {'Q', {" ### ", "#   #", "#   #", "#   #", "# # #", "#  # ", " ## #"}},
      {'R', {"#### ", "#   #", "#   #", "#### ", "# #  ", "#  # ", "#   #"}},
      {'S', {" ####", "#    ", "#    ", " ### ", "    #", "    #", "#### "}},
      {'T', {"#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "}},
      {'U', {"#   #", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "}},
      {'V', {"#   #", "#   #", "#   #", "#   #", "#   #", " # # ", "  #  "}},
      {'W', {"#   #", "#   #", "#   #", "# # #", "# # #", "## ##", "#   #"}},
      {'X', {"#   #", "#   #", " # # ", "  #  ", " # # ", "#   #", "#   #"}},
      {'Y', {"#   #", "#   #", " # # ", "  #  ", "  #  ", "  #  ", "  #  "}},
      {'Z', {"#####", "    #", "   # ", "  #  ", " #   ", "#    ", "#####"}},
      {'.', {"     ", "     ", "     ", "     ", "     ", " ##  ", " ##  "}},
      {',', {"     ", "     ", "     ", "     ", "  #  ", "  #  ", " #   "}},
      {'-', {"     ", "     ", "     ", " ### ", "     ", "     ", "     "}},
      {'+', {"     ", "  #  ", "  #  ", "#####", "  #  ", "  #  ", "     "}},
      {':', {"     ", " ##  ", " ##  ", "     ", " ##  ", " ##  ", "     "}},
      {'/', {"    #", "   # ", "   # ", "  #  ", " #   ", " #   ", "#    "}},
      {'%', {"##  #", "## # ", "   # ", "  #  ", " #   ", " # ##", "#  ##"}},
      {'_', {"     ", "     ", "     ", "     ", "     ", "     ", "#####"}},
      {'=', {"     ", "     ", "#####", "     ", "#####", "     ", "     "}},
      {' ', {"     ", "     ", "     ", "     ", "     ", "     ", "     "}},
  };
  return table;
}

void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& data) {
  append_be32(out, static_cast<std::uint32_t>(data.size()));
  const size_t type_pos = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0, out.data() + type_pos, static_cast<uInt>(4 + data.size())));
  append_be32(out, crc);
}

}  // namespace

Canvas::Canvas(int width, int height, Rgb background) : w_(width), h_(height) {
  if (width < 1 || height < 1) throw std::invalid_argument("Canvas: bad size");
  rgb_.resize(static_cast<size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) set(x, y, background);
}

void Canvas::set(int x, int y, Rgb c) {
  if (x < 0 || x >= w_ || y < 0 || y >= h_) return;
  const size_t i = (static_cast<size_t>(y) * w_ + x) * 3;
  rgb_[i] = c.r;
  rgb_[i + 1] = c.g;
  rgb_[i + 2] = c.b;
}

Rgb Canvas::get(int x, int y) const {
  if (x < 0 || x >= w_ || y < 0 || y >= h_) return {};
  const size_t i = (static_cast<size_t>(y) * w_ + x) * 3;
  return {rgb_[i], rgb_[i + 1], rgb_[i + 2]};
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
  for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
    for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, c);
}

void Canvas::line(int x0, int y0, int x1, int y1, Rgb c) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    set(x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void Canvas::text(int x, int y, const std::string& s, Rgb c, int scale) {
  const auto& table = glyphs();
  int cx = x;
  for (char raw : s) {
    const char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
    const auto it = table.find(ch);
    if (it == table.end()) {
      // unknown glyph: hollow box
      for (int i = 0; i < 5 * scale; ++i) {
        set(cx + i, y, c);
        set(cx + i, y + 7 * scale - 1, c);
      }
      for (int j = 0; j < 7 * scale; ++j) {
        set(cx, y + j, c);
        set(cx + 5 * scale - 1, y + j, c);
      }
    } else {
      for (int row = 0; row < 7; ++row) {
        for (int col = 0; col < 5; ++col) {
          if (it->second[static_cast<size_t>(row)][col] != '#') continue;
          for (int sy = 0; sy < scale; ++sy)
            for (int sx = 0; sx < scale; ++sx)
              set(cx + col * scale + sx, y + row * scale + sy, c);
        }
      }
    }
    cx += 6 * scale;
  }
}

int Canvas::text_width(const std::string& s, int scale) {
  return static_cast<int>(s.size()) * 6 * scale;
}

void Canvas::write_png(const std::string& path) const {
  // raw scanlines, filter byte 0 per row
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<size_t>(h_) * (1 + static_cast<size_t>(w_) * 3));
  for (int y = 0; y < h_; ++y) {
    raw.push_back(0);
    const std::uint8_t* row = rgb_.data() + static_cast<size_t>(y) * w_ * 3;
    raw.insert(raw.end(), row, row + static_cast<size_t>(w_) * 3);
  }
  uLongf compressed_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(compressed_size);
  if (compress2(compressed.data(), &compressed_size, raw.data(),
                static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw std::runtime_error("PNG compression failed");
  }
  compressed.resize(compressed_size);

  std::vector<std::uint8_t> png = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<std::uint8_t> ihdr;
  append_be32(ihdr, static_cast<std::uint32_t>(w_));
  append_be32(ihdr, static_cast<std::uint32_t>(h_));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(png, "IHDR", ihdr);
  append_chunk(png, "IDAT", compressed);
  append_chunk(png, "IEND", {});

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(png.data()),
            static_cast<std::streamsize>(png.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

// ---------------------------------------------------------------------------
// Charts

namespace {

const Rgb kAxis{60, 60, 60};
const std::array<Rgb, 4> kSeriesColors = {Rgb{200, 40, 40}, Rgb{40, 90, 200},
                                          Rgb{30, 150, 60}, Rgb{160, 90, 200}};

void write_sidecar(const std::string& png_path, const nlohmann::json& j) {
  std::ofstream out(png_path + ".json");
  if (!out) throw std::runtime_error("cannot write sidecar for " + png_path);
  out << j.dump(2) << "\n";
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace

void write_loss_curve_png(const std::string& path,
                          const std::vector<LossPoint>& points) {
  if (points.empty()) throw std::invalid_argument("write_loss_curve_png: no points");
  const int W = 900, H = 540, ml = 70, mr = 20, mt = 30, mb = 50;
  Canvas canvas(W, H);

  struct Series {
    const char* name;
    std::vector<double> values;
  };
  std::vector<Series> series = {{"L_TOTAL", {}}, {"L_SEG", {}}, {"L_SIM", {}},
                                {"L_SMOOTH", {}}};
  for (const auto& p : points) {
    series[0].values.push_back(p.total);
    series[1].values.push_back(p.seg);
    series[2].values.push_back(p.sim);
    series[3].values.push_back(p.smooth);
  }
  // drop all-zero component series (static variants log zeros there)
  std::erase_if(series, [](const Series& s) {
    return std::all_of(s.values.begin(), s.values.end(),
                       [](double v) { return v == 0.0; });
  });

  double lo = 0.0, hi = 1e-12;
  for (const auto& s : series)
    for (double v : s.values) hi = std::max(hi, v);

  auto x_of = [&](size_t i) {
    return ml + static_cast<int>((W - ml - mr - 1) *
                                 (points.size() == 1
                                      ? 0.0
                                      : static_cast<double>(i) / (points.size() - 1)));
  };
  auto y_of = [&](double v) {
    return H - mb - static_cast<int>((H - mt - mb - 1) * (v - lo) / (hi - lo));
  };

  canvas.line(ml, mt, ml, H - mb, kAxis);
  canvas.line(ml, H - mb, W - mr, H - mb, kAxis);
  canvas.text(ml, H - mb + 10, "STEP", kAxis);
  canvas.text(5, mt - 20, format_value(hi), kAxis);
  canvas.text(5, H - mb - 8, format_value(lo), kAxis);

  for (size_t si = 0; si < series.size(); ++si) {
    const Rgb color = kSeriesColors[si % kSeriesColors.size()];
    for (size_t i = 0; i + 1 < points.size(); ++i) {
      canvas.line(x_of(i), y_of(series[si].values[i]), x_of(i + 1),
                  y_of(series[si].values[i + 1]), color);
    }
    if (points.size() == 1) {
      canvas.set(x_of(0), y_of(series[si].values[0]), color);
    }
    canvas.text(W - mr - 90, mt + static_cast<int>(si) * 12, series[si].name, color);
  }
  canvas.write_png(path);

  nlohmann::json sidecar;
  sidecar["n_points"] = points.size();
  sidecar["first_step"] = points.front().step;
  sidecar["last_step"] = points.back().step;
  nlohmann::json jseries = nlohmann::json::object();
  for (const auto& s : series) jseries[s.name] = s.values;
  sidecar["series"] = jseries;
  write_sidecar(path, sidecar);
}

void write_metric_bars_png(const std::string& path,
                           const std::vector<std::string>& group_names,
                           const std::vector<std::string>& metric_names,
                           const std::vector<std::vector<double>>& values) {
  if (group_names.empty() || metric_names.empty() ||
      values.size() != group_names.size()) {
    throw std::invalid_argument("write_metric_bars_png: inconsistent inputs");
  }
  for (const auto& row : values) {
    if (row.size() != metric_names.size()) {
      throw std::invalid_argument("write_metric_bars_png: ragged value rows");
    }
  }
  const int n_groups = static_cast<int>(group_names.size());
  const int n_metrics = static_cast<int>(metric_names.size());
  const int W = std::max(640, 120 * n_metrics), H = 480;
  const int ml = 60, mr = 20, mt = 30, mb = 70;
  Canvas canvas(W, H);

  double hi = 1e-12;
  for (const auto& row : values)
    for (double v : row) hi = std::max(hi, v);
  hi = std::max(hi, 1.0);  // metrics are fractions; keep a stable scale

  canvas.line(ml, mt, ml, H - mb, kAxis);
  canvas.line(ml, H - mb, W - mr, H - mb, kAxis);
  canvas.text(8, mt - 8, format_value(hi), kAxis);
  canvas.text(8, H - mb - 8, "0", kAxis);

  const int slot = (W - ml - mr) / n_metrics;
  const int bar = std::max(4, (slot - 16) / n_groups);
  for (int m = 0; m < n_metrics; ++m) {
    const int x0 = ml + m * slot + 8;
    canvas.text(ml + m * slot + slot / 2 - Canvas::text_width(metric_names[static_cast<size_t>(m)]) / 2,
                H - mb + 12, metric_names[static_cast<size_t>(m)], kAxis);
    for (int g = 0; g < n_groups; ++g) {
      const double v = values[static_cast<size_t>(g)][static_cast<size_t>(m)];
      const int hpx = static_cast<int>((H - mt - mb - 1) * std::clamp(v, 0.0, hi) / hi);
      const Rgb color = kSeriesColors[static_cast<size_t>(g) % kSeriesColors.size()];
      canvas.fill_rect(x0 + g * bar, H - mb - hpx, x0 + (g + 1) * bar - 2, H - mb - 1,
                       color);
    }
  }
  for (int g = 0; g < n_groups; ++g) {
    const Rgb color = kSeriesColors[static_cast<size_t>(g) % kSeriesColors.size()];
    canvas.fill_rect(ml + 8, mt + g * 14, ml + 18, mt + g * 14 + 8, color);
    canvas.text(ml + 24, mt + g * 14, group_names[static_cast<size_t>(g)], kAxis);
  }
  canvas.write_png(path);

  nlohmann::json sidecar;
  sidecar["groups"] = group_names;
  sidecar["metrics"] = metric_names;
  sidecar["values"] = values;
  write_sidecar(path, sidecar);
}

Tensor<std::uint8_t> mask_contour(const Tensor<std::uint8_t>& mask) {
  const int h = mask.height(), w = mask.width();
  Tensor<std::uint8_t> contour(1, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask(0, y, x)) continue;
      const bool edge = y == 0 || x == 0 || y == h - 1 || x == w - 1 ||
                        !mask(0, y - 1, x) || !mask(0, y + 1, x) ||
                        !mask(0, y, x - 1) || !mask(0, y, x + 1);
      contour(0, y, x) = edge ? 1 : 0;
    }
  }
  return contour;
}

void write_overlay_png(const std::string& path, const TensorF& background,
                       const Tensor<std::uint8_t>& gt_mask,
                       const Tensor<std::uint8_t>& pred_mask) {
  const int h = background.height(), w = background.width();
  if (gt_mask.height() != h || gt_mask.width() != w || pred_mask.height() != h ||
      pred_mask.width() != w) {
    throw std::invalid_argument("write_overlay_png: shape mismatch");
  }
  const double lo = background.array().minCoeff();
  const double hi = background.array().maxCoeff();
  const double span = hi > lo ? hi - lo : 1.0;

  const int scale = std::max(1, 256 / std::max(h, w));
  Canvas canvas(w * scale, h * scale);
  const Tensor<std::uint8_t> gt_c = mask_contour(gt_mask);
  const Tensor<std::uint8_t> pred_c = mask_contour(pred_mask);
  long n_gt = 0, n_pred = 0, n_both = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto gray = static_cast<std::uint8_t>(
          255.0 * (background(0, y, x) - lo) / span);
      Rgb c{gray, gray, gray};
      if (pred_c(0, y, x)) c = {255, static_cast<std::uint8_t>(gt_c(0, y, x) ? 255 : 0), 0};
      else if (gt_c(0, y, x)) c = {0, 255, 0};
      n_gt += gt_c(0, y, x);
      n_pred += pred_c(0, y, x);
      n_both += gt_c(0, y, x) && pred_c(0, y, x);
      for (int sy = 0; sy < scale; ++sy)
        for (int sx = 0; sx < scale; ++sx)
          canvas.set(x * scale + sx, y * scale + sy, c);
    }
  }
  canvas.write_png(path);

  nlohmann::json sidecar;
  sidecar["gt_contour_pixels"] = n_gt;
  sidecar["pred_contour_pixels"] = n_pred;
  sidecar["shared_contour_pixels"] = n_both;
  write_sidecar(path, sidecar);
}

}  // namespace longiseg
