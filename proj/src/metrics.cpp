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

#include "longiseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace longiseg {

namespace {

std::vector<std::array<int, 3>> neighbor_offsets(Connectivity conn) {
  std::vector<std::array<int, 3>> out;
  if (conn == Connectivity::faces6) {
    out = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    return out;
  }
  for (int dd = -1; dd <= 1; ++dd)
    for (int dh = -1; dh <= 1; ++dh)
      for (int dw = -1; dw <= 1; ++dw)
        if (dd || dh || dw) out.push_back({dd, dh, dw});
  return out;
}

void check_mask(const MaskVolume& m, const char* what) {
  if (!is_binary(m)) {
    throw std::invalid_argument(std::string(what) + ": mask is not binary");
  }
}

}  // namespace

ComponentLabels connected_components(const MaskVolume& mask, Connectivity conn) {
  check_mask(mask, "connected_components");
  const auto [D, H, W] = mask.shape();
  ComponentLabels out;
  out.labels = Volume3<std::int32_t>(D, H, W, 0);
  const auto offsets = neighbor_offsets(conn);
  std::vector<std::array<int, 3>> stack;
  for (int d = 0; d < D; ++d) {
    for (int h = 0; h < H; ++h) {
      for (int w = 0; w < W; ++w) {
        if (!mask(d, h, w) || out.labels(d, h, w)) continue;
        const std::int32_t label = ++out.count;
        out.labels(d, h, w) = label;
        stack.assign(1, {d, h, w});
        while (!stack.empty()) {
          const auto [cd, ch, cw] = stack.back();
          stack.pop_back();
          for (const auto& [dd, dh, dw] : offsets) {
            const int nd = cd + dd, nh = ch + dh, nw = cw + dw;
            if (nd < 0 || nd >= D || nh < 0 || nh >= H || nw < 0 || nw >= W) continue;
            if (!mask(nd, nh, nw) || out.labels(nd, nh, nw)) continue;
            out.labels(nd, nh, nw) = label;
            stack.push_back({nd, nh, nw});
          }
        }
      }
    }
  }
  return out;
}

VoxelMetrics voxel_metrics(const MaskVolume& pred, const MaskVolume& gt) {
  if (!pred.same_shape(gt)) {
    throw std::invalid_argument("voxel_metrics: shape mismatch");
  }
  check_mask(pred, "voxel_metrics(pred)");
  check_mask(gt, "voxel_metrics(gt)");
  VoxelMetrics m;
  long p = 0, g = 0;
  for (Eigen::Index k = 0; k < pred.voxels(); ++k) {
    const bool pi = pred.array()[k] != 0;
    const bool gi = gt.array()[k] != 0;
    p += pi;
    g += gi;
    m.tp += pi && gi;
    m.fp += pi && !gi;
    m.fn += !pi && gi;
  }
  if (g == 0) {
    m.dsc = (p == 0) ? 1.0 : 0.0;
    m.vd = (p == 0) ? 0.0 : 1.0;
  } else {
    m.dsc = 2.0 * m.tp / static_cast<double>(p + g);
    m.vd = std::abs(static_cast<double>(p - g)) / static_cast<double>(g);
  }
  m.ppv = (p == 0) ? (g == 0 ? 1.0 : 0.0) : m.tp / static_cast<double>(p);
  return m;
}

LesionMetrics lesion_metrics(const MaskVolume& pred, const MaskVolume& gt,
                             Connectivity conn) {
  if (!pred.same_shape(gt)) {
    throw std::invalid_argument("lesion_metrics: shape mismatch");
  }
  const ComponentLabels gt_cc = connected_components(gt, conn);
  const ComponentLabels pred_cc = connected_components(pred, conn);

  std::vector<char> gt_hit(static_cast<size_t>(gt_cc.count) + 1, 0);
  std::vector<char> pred_hit(static_cast<size_t>(pred_cc.count) + 1, 0);
  for (Eigen::Index k = 0; k < pred.voxels(); ++k) {
    const std::int32_t gl = gt_cc.labels.array()[k];
    const std::int32_t pl = pred_cc.labels.array()[k];
    if (gl && pred.array()[k]) gt_hit[gl] = 1;
    if (pl && gt.array()[k]) pred_hit[pl] = 1;
  }

  LesionMetrics m;
  m.n_gt_lesions = gt_cc.count;
  m.n_pred_lesions = pred_cc.count;
  for (int i = 1; i <= gt_cc.count; ++i) m.n_detected += gt_hit[i];
  for (int i = 1; i <= pred_cc.count; ++i) m.n_false_lesions += !pred_hit[i];
  m.ltpr = (m.n_gt_lesions == 0)
               ? 1.0
               : m.n_detected / static_cast<double>(m.n_gt_lesions);
  m.lfpr = (m.n_pred_lesions == 0)
               ? 0.0
               : m.n_false_lesions / static_cast<double>(m.n_pred_lesions);
  return m;
}

double overall_score(double dsc, double ppv, double vd, double ltpr, double lfpr) {
  const double vd_clipped = std::clamp(vd, 0.0, 1.0);
  return 0.125 * dsc + 0.125 * ppv + 0.25 * (1.0 - vd_clipped) + 0.25 * ltpr +
         0.25 * (1.0 - lfpr);
}

MetricReport compute_report(const MaskVolume& pred, const MaskVolume& gt,
                            Connectivity conn) {
  const VoxelMetrics v = voxel_metrics(pred, gt);
  const LesionMetrics l = lesion_metrics(pred, gt, conn);
  MetricReport r;
  r.dsc = v.dsc;
  r.ppv = v.ppv;
  r.vd = v.vd;
  r.ltpr = l.ltpr;
  r.lfpr = l.lfpr;
  r.overall = overall_score(v.dsc, v.ppv, v.vd, l.ltpr, l.lfpr);
  r.tp = v.tp;
  r.fp = v.fp;
  r.fn = v.fn;
  r.n_gt_lesions = l.n_gt_lesions;
  r.n_pred_lesions = l.n_pred_lesions;
  r.n_detected = l.n_detected;
  r.n_false_lesions = l.n_false_lesions;
  return r;
}

MetricReport average_reports(const std::vector<MetricReport>& reports) {
  if (reports.empty()) {
    throw std::invalid_argument("average_reports: no reports");
  }
  MetricReport mean;
  for (const auto& r : reports) {
    mean.dsc += r.dsc;
    mean.ppv += r.ppv;
    mean.ltpr += r.ltpr;
    mean.lfpr += r.lfpr;
    mean.vd += r.vd;
    mean.overall += r.overall;
    mean.tp += r.tp;
    mean.fp += r.fp;
    mean.fn += r.fn;
    mean.n_gt_lesions += r.n_gt_lesions;
    mean.n_pred_lesions += r.n_pred_lesions;
    mean.n_detected += r.n_detected;
    mean.n_false_lesions += r.n_false_lesions;
  }
  const double n = static_cast<double>(reports.size());
  mean.dsc /= n;
  mean.ppv /= n;
  mean.ltpr /= n;
  mean.lfpr /= n;
  mean.vd /= n;
  mean.overall /= n;
  return mean;
}

namespace {

nlohmann::json report_json(const MetricReport& r) {
  return nlohmann::json{
      {"dsc", r.dsc},
      {"ppv", r.ppv},
      {"ltpr", r.ltpr},
      {"lfpr", r.lfpr},
      {"vd", r.vd},
      {"overall", r.overall},
      {"counts",
       {{"tp", r.tp},
        {"fp", r.fp},
        {"fn", r.fn},
        {"n_gt_lesions", r.n_gt_lesions},
        {"n_pred_lesions", r.n_pred_lesions},
        {"n_detected", r.n_detected},
        {"n_false_lesions", r.n_false_lesions}}}};
}

}  // namespace

std::string MetricReport::to_json() const {
  return report_json(*this).dump(2);
}

MetricReport MetricReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  MetricReport r;
  r.dsc = j.at("dsc").get<double>();
  r.ppv = j.at("ppv").get<double>();
  r.ltpr = j.at("ltpr").get<double>();
  r.lfpr = j.at("lfpr").get<double>();
  r.vd = j.at("vd").get<double>();
  r.overall = j.at("overall").get<double>();
  const auto& c = j.at("counts");
  r.tp = c.at("tp").get<long>();
  r.fp = c.at("fp").get<long>();
  r.fn = c.at("fn").get<long>();
  r.n_gt_lesions = c.at("n_gt_lesions").get<int>();
  r.n_pred_lesions = c.at("n_pred_lesions").get<int>();
  r.n_detected = c.at("n_detected").get<int>();
  r.n_false_lesions = c.at("n_false_lesions").get<int>();
  return r;
}

std::string reports_to_csv(const std::vector<std::string>& subject_ids,
                           const std::vector<MetricReport>& reports) {
  if (subject_ids.size() != reports.size()) {
    throw std::invalid_argument("reports_to_csv: id/report count mismatch");
  }
  std::ostringstream os;
  os.precision(10);
  os << "subject,dsc,ppv,ltpr,lfpr,vd,overall\n";
  auto row = [&os](const std::string& id, double dsc, double ppv, double ltpr,
                   double lfpr, double vd, double overall) {
    os << id << "," << dsc << "," << ppv << "," << ltpr << "," << lfpr << ","
       << vd << "," << overall << "\n";
  };
  for (size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    row(subject_ids[i], r.dsc, r.ppv, r.ltpr, r.lfpr, r.vd, r.overall);
  }
  if (!reports.empty()) {
    const MetricReport mean = average_reports(reports);
    auto stddev = [&](auto get) {
      double s = 0;
      for (const auto& r : reports) {
        const double d = get(r) - get(mean);
        s += d * d;
      }
      return std::sqrt(s / reports.size());
    };
    row("mean", mean.dsc, mean.ppv, mean.ltpr, mean.lfpr, mean.vd, mean.overall);
    row("std", stddev([](const MetricReport& r) { return r.dsc; }),
        stddev([](const MetricReport& r) { return r.ppv; }),
        stddev([](const MetricReport& r) { return r.ltpr; }),
        stddev([](const MetricReport& r) { return r.lfpr; }),
        stddev([](const MetricReport& r) { return r.vd; }),
        stddev([](const MetricReport& r) { return r.overall; }));
  }
  return os.str();
}

}  // namespace longiseg
