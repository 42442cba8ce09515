// Copyright 2026 The xdet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "xdet/pipeline.h"

#include <fmt/format.h>

namespace xdet {

namespace {

void RequireInputs(const PairInputs& in) {
  if (in.target_gt == nullptr || in.dets == nullptr) {
    throw Error(ErrorKind::kUsage, "pair inputs need ground truth and detections");
  }
}

void RequireEmbeddings(const PairInputs& in) {
  if (in.src_emb == nullptr || in.tgt_emb == nullptr) {
    throw Error(ErrorKind::kUsage,
                "open-label evaluation needs source and target embeddings");
  }
}

std::string Fixed3(const std::optional<double>& v, const char* missing) {
  return v ? fmt::format("{:.3f}", *v) : std::string(missing);
}

}  // namespace

CellReport EvaluateClosed(const PairInputs& in, const EvalConfig& config,
                          int threads) {
  RequireInputs(in);
  const Vocabulary source = in.source_vocab != nullptr
                                ? *in.source_vocab
                                : VocabularyFromDetections(*in.dets);
  const SharedLabelMap map =
      BuildSharedMap(source, in.target_gt->vocabulary, in.mapping);
  const DetectionSet kept = FilterToShared(*in.dets, map);
  const DatasetAnnotations restricted =
      RestrictGroundTruth(*in.target_gt, map, config.off_intersection);
  return EvaluateCell(restricted, kept, config, threads);
}

OpenResult EvaluateOpen(const PairInputs& in, const EvalConfig& config,
                        int threads) {
  RequireInputs(in);
  RequireEmbeddings(in);
  const DetectionSet remapped =
      OpenLabelRemap(*in.dets, *in.src_emb, in.target_gt->vocabulary,
                     *in.tgt_emb, config.tau, config.below_tau);
  OpenResult result;
  result.retained = static_cast<int64_t>(remapped.detections.size());
  result.report = EvaluateCell(*in.target_gt, remapped, config, threads);
  return result;
}

DiagnosticsResult DiagnosePair(const PairInputs& in, const EvalConfig& config) {
  RequireInputs(in);
  RequireEmbeddings(in);
  const auto matches = MatchForDiagnostics(*in.target_gt, *in.dets, config);
  return DiagnoseMismatches(matches, in.target_gt->vocabulary, *in.src_emb,
                            *in.tgt_emb, in.region_emb, config);
}

TauSweep SweepTau(const PairInputs& in, const std::vector<double>& taus,
                  const EvalConfig& config, std::string pair_name, int threads) {
  for (size_t i = 0; i < taus.size(); ++i) {
    if (!(taus[i] > 0.0 && taus[i] < 1.0) || (i > 0 && !(taus[i] > taus[i - 1]))) {
      throw Error(ErrorKind::kUsage,
                  "taus must be strictly increasing within (0, 1)");
    }
  }
  TauSweep sweep;
  sweep.pair_name = std::move(pair_name);
  for (double tau : taus) {
    EvalConfig c = config;
    c.tau = tau;
    OpenResult open = EvaluateOpen(in, c, threads);
    sweep.points.push_back({tau, open.report.map_5095, open.retained});
  }
  sweep.closed_map = EvaluateClosed(in, config, threads).map_5095;
  return sweep;
}

std::string SweepTauCsv(const std::vector<TauSweep>& sweeps) {
  std::string out = "pair";
  if (!sweeps.empty()) {
    for (const auto& p : sweeps.front().points) out += fmt::format(",tau={}", p.tau);
  }
  out += ",closed\n";
  for (const auto& s : sweeps) {
    out += s.pair_name;
    for (const auto& p : s.points) out += "," + Fixed3(p.map_5095, "");
    out += "," + Fixed3(s.closed_map, "") + "\n";
  }
  return out;
}

std::string SweepTauMarkdown(const std::vector<TauSweep>& sweeps) {
  std::string header = "| Pair |";
  std::string rule = "|---|";
  if (!sweeps.empty()) {
    for (const auto& p : sweeps.front().points) {
      header += fmt::format(" τ={} |", p.tau);
      rule += "---|";
    }
  }
  header += " Closed |\n";
  rule += "---|\n";
  std::string out = header + rule;
  for (const auto& s : sweeps) {
    out += "| " + s.pair_name + " |";
    for (const auto& p : s.points) out += " " + Fixed3(p.map_5095, "--") + " |";
    out += " " + Fixed3(s.closed_map, "--") + " |\n";
  }
  return out;
}

nlohmann::json ToJson(const TauSweep& sweep) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : sweep.points) {
    points.push_back({{"tau", p.tau},
                      {"map_5095", p.map_5095 ? nlohmann::json(*p.map_5095)
                                              : nlohmann::json(nullptr)},
                      {"retained", p.retained}});
  }
  return {{"pair", sweep.pair_name},
          {"points", std::move(points)},
          {"closed_map", sweep.closed_map ? nlohmann::json(*sweep.closed_map)
                                          : nlohmann::json(nullptr)}};
}

namespace {

std::string Percent(const std::optional<double>& v) {
  return v ? fmt::format("{:.0f}%", *v * 100.0) : std::string("--");
}

std::string MedianRank(const std::optional<double>& v) {
  if (!v) return "--";
  return *v == static_cast<double>(static_cast<int64_t>(*v))
             ? fmt::format("{}", static_cast<int64_t>(*v))
             : fmt::format("{:.1f}", *v);
}

}  // namespace

std::string DiagnosticsMarkdown(const std::vector<DiagnosticsRow>& rows) {
  const int k = rows.empty() ? 5 : rows.front().top_k;
  std::string out = fmt::format(
      "| Train→Test | ΔmAP | Near-miss | E[s_tt] | Med. Rank | Top-{} | "
      "E[Δ_it] (%(Δ_it>0)) |\n|---|---|---|---|---|---|---|\n",
      k);
  for (const auto& r : rows) {
    const auto& s = r.summary;
    std::string delta_it = "--";
    if (s.mean_delta_it) {
      delta_it = fmt::format("{:+.3f} ({})", *s.mean_delta_it,
                             Percent(s.frac_delta_positive));
    }
    out += fmt::format("| {} | {} | {} | {} | {} | {} | {} |\n", r.pair_name,
                       r.delta_map ? fmt::format("{:+.2f}", *r.delta_map) : "--",
                       Percent(s.near_miss_rate),
                       s.mean_s_tt ? fmt::format("{:.2f}", *s.mean_s_tt) : "--",
                       MedianRank(s.median_rank), Percent(s.top_k_rate), delta_it);
  }
  return out;
}

}  // namespace xdet
