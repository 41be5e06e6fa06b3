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

/// Static plot emission: loss curves, per-metric bar charts and qualitative
/// ground-truth/prediction overlays, written as PNG files. Every chart gets a
/// JSON sidecar (<file>.json) with the plotted numbers so results stay
/// scriptable.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "longiseg/tensor.hpp"

namespace longiseg {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

class Canvas {
 public:
  Canvas(int width, int height, Rgb background = {255, 255, 255});

  int width() const { return w_; }
  int height() const { return h_; }

  void set(int x, int y, Rgb c);
  Rgb get(int x, int y) const;
  void fill_rect(int x0, int y0, int x1, int y1, Rgb c);
  void line(int x0, int y0, int x1, int y1, Rgb c);
  /// 5x7 bitmap font (digits, upper-case letters, basic punctuation);
  /// lower-case renders as upper-case.
  void text(int x, int y, const std::string& s, Rgb c, int scale = 1);
  static int text_width(const std::string& s, int scale = 1);

  void write_png(const std::string& path) const;

 private:
  int w_, h_;
  std::vector<std::uint8_t> rgb_;
};

struct LossPoint {
  long step = 0;
  double total = 0, seg = 0, sim = 0, smooth = 0;
};

void write_loss_curve_png(const std::string& path,
                          const std::vector<LossPoint>& points);

/// Grouped bars: values[group][metric].
void write_metric_bars_png(const std::string& path,
                           const std::vector<std::string>& group_names,
                           const std::vector<std::string>& metric_names,
                           const std::vector<std::vector<double>>& values);

/// Grayscale background with the ground-truth contour on the green channel
/// and the predicted contour on the red channel (equal contours read yellow).
void write_overlay_png(const std::string& path, const TensorF& background,
                       const Tensor<std::uint8_t>& gt_mask,
                       const Tensor<std::uint8_t>& pred_mask);

/// 4-neighbour contour of a binary 2D mask (mask pixels touching background).
Tensor<std::uint8_t> mask_contour(const Tensor<std::uint8_t>& mask);

}  // namespace longiseg
