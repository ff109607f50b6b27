// Copyright 2026 The cmcl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "cmcl/cmcl.hpp"
#include "gradcheck.hpp"

using namespace cmcl;
using cmcl::testing::numeric_gradient;
using cmcl::testing::relative_error;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s  %s  (%s)\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(double v, int digits = 4) { return io::format_real(v, digits); }

GeneratorConfig regression_dataset() {
  GeneratorConfig g;
  g.num_classes = 4;
  g.n_train = 200;
  g.n_test = 100;
  g.latent_dim = 8;
  g.modalities = {{"image", ModalityKind::kVector, 24},
                  {"mesh", ModalityKind::kVector, 16},
                  {"points", ModalityKind::kPointSet, 3}};
  g.points_per_set = 8;
  g.noise_sigma = 0.2;
  g.nuisance_strength = 1.5;
  g.seed = 1;
  return g;
}

TrainConfig regression_training() {
  TrainConfig c;
  c.batch_size = 32;
  c.iterations = 4000;
  c.learning_rate = 0.01;
  c.seed = 1;
  return c;
}

// ---------------------------------------------------------------- gradients

enum class Term { kCenter, kCrossEntropy, kPair, kCombined };

struct GradCase {
  Dataset data;
  std::vector<std::size_t> batch, labels;
  Model<double> model;
  CenterBank<double> bank;
  TrainConfig cfg;
};

GradCase random_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&rng](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  GradCase c;
  const std::size_t K = pick(2, 4), B = pick(2, 5), k = pick(2, 4);
  c.data.num_classes = K;
  c.data.modalities = {{"a", ModalityKind::kVector, pick(3, 5)},
                       {"b", ModalityKind::kPointSet, pick(2, 3)}};
  if (pick(0, 1)) c.data.modalities.push_back({"c", ModalityKind::kVector, pick(2, 4)});
  std::normal_distribution<double> n01;
  for (std::size_t i = 0; i < B; ++i) {
    Instance inst{static_cast<std::int64_t>(i), pick(0, K - 1), {}};
    for (const auto& spec : c.data.modalities) {
      Sample s;
      s.rows = spec.kind == ModalityKind::kPointSet ? pick(2, 4) : 1;
      for (std::size_t q = 0; q < s.rows * spec.dim; ++q) s.values.push_back(static_cast<float>(n01(rng)));
      inst.samples.push_back(std::move(s));
    }
    c.labels.push_back(inst.label);
    c.batch.push_back(i);
    c.data.instances.push_back(std::move(inst));
  }
  c.model = Model<double>::init({c.data.modalities, K, k, pick(3, 5), pick(3, 5), seed});
  for (auto& p : c.model.parameters())
    if (p.is_bias)
      for (auto& x : p.tensor->values) x = 0.1 * n01(rng);
  c.bank = CenterBank<double>::init(K, k, seed + 1);
  for (auto& x : c.bank.centers.values) x = n01(rng);
  c.cfg.center_reduction = pick(0, 1) ? Reduction::kSum : Reduction::kMean;
  c.cfg.mse_reduction = pick(0, 1) ? Reduction::kSum : Reduction::kMean;
  std::uniform_real_distribution<double> w(0.1, 2.0);
  c.cfg.weights = {w(rng), w(rng), w(rng)};
  return c;
}

Var<double> pick_term(const BatchForward<double>& f, Term t) {
  switch (t) {
    case Term::kCenter: return f.l_c;
    case Term::kCrossEntropy: return f.l_d;
    case Term::kPair: return f.l_m;
    case Term::kCombined: return f.total;
  }
  return f.total;
}

double param_loss(GradCase& c, Term t) {
  Tape<double> tape;
  auto f = forward_batch(tape, c.data, std::span<const std::size_t>(c.batch),
                         std::span<const std::size_t>(c.labels), c.model, c.bank, c.cfg);
  return pick_term(f, t).item();
}

/// Loss of explicit embedding matrices (one [B x k] per modality).
Var<double> embedding_loss(Tape<double>& tape, std::vector<Var<double>>& emb, GradCase& c, Term t) {
  std::span<const Var<double>> e(emb);
  std::span<const std::size_t> y(c.labels);
  auto lc = [&] { return cross_modal_center_loss(e, y, c.bank, c.cfg.center_reduction); };
  auto ld = [&] {
    std::vector<Var<double>> lp;
    for (const auto& v : emb) lp.push_back(classify(v, c.model.head));
    return discriminative_loss(std::span<const Var<double>>(lp), y);
  };
  auto lm = [&] { return cross_modal_mse(e, c.cfg.mse_reduction); };
  switch (t) {
    case Term::kCenter: return lc();
    case Term::kCrossEntropy: return ld();
    case Term::kPair: return lm();
    case Term::kCombined: return combined_loss(lc(), ld(), lm(), c.cfg.weights);
  }
  (void)tape;
  return lm();
}

/// Worst relative error over the configurations for one loss term, against
/// embeddings and against all parameters.
std::pair<double, double> gradient_errors(Term t, std::size_t configs, std::uint64_t base) {
  double worst_emb = 0, worst_param = 0;
  for (std::size_t n = 0; n < configs; ++n) {
    auto c = random_case(base + n);
    const std::size_t M = c.data.modalities.size(), B = c.batch.size(), k = c.bank.dim();

    // Embeddings.
    std::mt19937_64 rng(base + 7919 * n);
    const auto flat = cmcl::testing::random_vector(M * B * k, rng);
    auto make = [&](Tape<double>& tape, const std::vector<double>& x, bool trainable) {
      std::vector<Var<double>> emb;
      for (std::size_t m = 0; m < M; ++m) {
        Tensor<double> v({B, k}, std::vector<double>(x.begin() + m * B * k, x.begin() + (m + 1) * B * k));
        emb.push_back(trainable ? tape.variable(std::move(v)) : tape.constant(std::move(v)));
      }
      return emb;
    };
    std::vector<double> analytic;
    {
      Tape<double> tape;
      auto emb = make(tape, flat, true);
      tape.backward(embedding_loss(tape, emb, c, t));
      for (const auto& v : emb) {
        auto g = tape.grad(v);
        analytic.insert(analytic.end(), g.begin(), g.end());
      }
    }
    const auto numeric = numeric_gradient(
        [&](const std::vector<double>& x) {
          Tape<double> tape;
          auto emb = make(tape, x, false);
          return embedding_loss(tape, emb, c, t).item();
        },
        flat);
    worst_emb = std::max(worst_emb, relative_error(analytic, numeric));

    // Parameters, concatenated in parameters() order.
    c.model.zero_grad();
    {
      Tape<double> tape;
      auto f = forward_batch(tape, c.data, std::span<const std::size_t>(c.batch),
                             std::span<const std::size_t>(c.labels), c.model, c.bank, c.cfg);
      tape.backward(pick_term(f, t));
    }
    std::vector<double> pa, pn;
    for (auto& p : c.model.parameters()) {
      pa.insert(pa.end(), p.tensor->grad->begin(), p.tensor->grad->end());
      const auto keep = p.tensor->values;
      auto g = numeric_gradient(
          [&](const std::vector<double>& x) {
            p.tensor->values = x;
            return param_loss(c, t);
          },
          keep);
      p.tensor->values = keep;
      pn.insert(pn.end(), g.begin(), g.end());
    }
    worst_param = std::max(worst_param, relative_error(pa, pn));
  }
  return {worst_emb, worst_param};
}

void gradient_suite() {
  const auto t0 = Clock::now();
  constexpr std::size_t kConfigs = 20;
  bool ok = true;
  std::string detail;
  const std::pair<Term, const char*> terms[] = {{Term::kCenter, "L_c"},
                                                {Term::kCrossEntropy, "L_d"},
                                                {Term::kPair, "L_m"},
                                                {Term::kCombined, "L"}};
  std::uint64_t base = 100;
  for (const auto& [term, name] : terms) {
    auto [e, p] = gradient_errors(term, kConfigs, base);
    base += 1000;
    ok = ok && e < cmcl::testing::kGradTolerance && p < cmcl::testing::kGradTolerance;
    detail += std::string(name) + " emb " + fmt(e, 2) + " param " + fmt(p, 2) + "; ";
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 60;
  report("gradient suite: L_c, L_d, L_m, L vs central differences, 20 configs each", ok,
         detail + "max rel err < 1e-4 required; " + fmt(secs, 3) + " s");
}

// -------------------------------------------------------------- center delta

std::vector<double> center_delta_oracle(const std::vector<std::vector<double>>& emb,
                                        const std::vector<std::size_t>& labels,
                                        const std::vector<double>& centers, std::size_t K,
                                        std::size_t k) {
  std::vector<double> out(K * k, 0.0);
  for (std::size_t j = 0; j < K; ++j) {
    std::size_t members = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == j) ++members;
    for (std::size_t d = 0; d < k; ++d) {
      double num = 0;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != j) continue;
        for (std::size_t m = 0; m < emb.size(); ++m) num += centers[j * k + d] - emb[m][i * k + d];
      }
      out[j * k + d] = num / (1.0 + static_cast<double>(members));
    }
  }
  return out;
}

void center_oracle() {
  std::mt19937_64 rng(42);
  auto pick = [&rng](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t K = pick(2, 5), M = pick(1, 3), B = pick(1, 16), k = pick(1, 4);
    auto bank = CenterBank<double>::init(K, k, trial);
    std::vector<std::size_t> labels(B);
    for (auto& y : labels) y = pick(0, K - 1);
    std::vector<std::vector<double>> raw;
    std::vector<Tensor<double>> tensors;
    for (std::size_t m = 0; m < M; ++m) {
      raw.push_back(cmcl::testing::random_vector(B * k, rng));
      tensors.emplace_back(Shape{B, k}, raw.back());
    }
    std::vector<const Tensor<double>*> ptrs;
    for (const auto& t : tensors) ptrs.push_back(&t);
    const auto got = center_delta<double>(std::span<const Tensor<double>* const>(ptrs),
                                          std::span<const std::size_t>(labels), bank);
    const auto want = center_delta_oracle(raw, labels, bank.centers.values, K, k);
    for (std::size_t q = 0; q < want.size(); ++q) worst = std::max(worst, std::abs(got.values[q] - want[q]));
  }

  // N=1, M=2, C=(0,0), v1=(1,0), v2=(0,1).
  CenterBank<double> bank{Tensor<double>::zeros({1, 2}), 0.5};
  Tensor<double> v1({1, 2}, {1, 0}), v2({1, 2}, {0, 1});
  const Tensor<double>* hand[] = {&v1, &v2};
  const std::size_t label[] = {0};
  auto delta = center_delta<double>(std::span<const Tensor<double>* const>(hand),
                                    std::span<const std::size_t>(label), bank);
  const bool hand_ok = delta.values == std::vector<double>{-0.5, -0.5};
  apply_center_update(bank, delta);
  const bool update_ok = bank.centers.values == std::vector<double>{0.25, 0.25};

  report("center-update oracle: 100 random batches + hand case", worst <= 1e-12 && hand_ok && update_ok,
         "max abs diff " + fmt(worst, 3) + "; hand case dC=(" + fmt(delta.values[0]) + "," +
             fmt(delta.values[1]) + ") C'=(" + fmt(bank.centers.values[0]) + "," +
             fmt(bank.centers.values[1]) + ")");
}

// ---------------------------------------------------------------------- mAP

/// Independent mAP: full sort by (distance, gallery position), precision
/// recounted from scratch at every rank.
double brute_map(const EmbeddingTable<double>& table, const std::vector<std::size_t>& queries,
                 const std::vector<std::size_t>& gallery, std::size_t R) {
  double total = 0;
  for (std::size_t q : queries) {
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t pos = 0, kept = 0; pos < gallery.size(); ++pos) {
      if (gallery[pos] == q) continue;
      double d = 0;
      for (std::size_t j = 0; j < table.dim; ++j) {
        const double e = table.rows[q].vector[j] - table.rows[gallery[pos]].vector[j];
        d += e * e;
      }
      ranked.push_back({d, kept++});
    }
    std::vector<std::size_t> kept_rows;
    for (std::size_t g : gallery)
      if (g != q) kept_rows.push_back(g);
    std::sort(ranked.begin(), ranked.end());
    const std::size_t r_max = R == 0 ? ranked.size() : R;
    auto relevant = [&](std::size_t r) {
      return table.rows[kept_rows[ranked[r].second]].label == table.rows[q].label;
    };
    double sum = 0;
    std::size_t n_rel = 0;
    for (std::size_t r = 0; r < r_max; ++r) {
      if (!relevant(r)) continue;
      ++n_rel;
      std::size_t hits = 0;
      for (std::size_t s = 0; s <= r; ++s) hits += relevant(s) ? 1 : 0;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
    total += n_rel == 0 ? 0.0 : sum / static_cast<double>(n_rel);
  }
  return total / static_cast<double>(queries.size());
}

void map_oracle() {
  std::mt19937_64 rng(7);
  auto pick = [&rng](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t K = pick(2, 4), k = pick(1, 4), nq = pick(1, 10), ng = pick(2, 20);
    const bool in_domain = trial % 3 == 0;
    EmbeddingTable<double> table;
    table.modalities = {{"q", ModalityKind::kVector, 1}, {"g", ModalityKind::kVector, 1}};
    table.dim = k;
    auto add_rows = [&](std::size_t m, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> v(k);
        // Small integer grid so exact distance ties occur.
        for (auto& x : v) x = static_cast<double>(pick(0, 3)) - 1.5;
        table.rows.push_back({static_cast<std::int64_t>(i), m, pick(0, K - 1), v});
      }
    };
    add_rows(0, in_domain ? ng : nq);
    if (!in_domain) add_rows(1, ng);
    const auto queries = table.rows_of(0);
    const auto gallery = in_domain ? table.rows_of(0) : table.rows_of(1);
    const std::size_t usable = in_domain ? ng - 1 : ng;
    const std::size_t R = pick(0, 1) ? 0 : pick(1, usable);
    const auto got = mean_average_precision(table, std::span<const std::size_t>(queries),
                                            std::span<const std::size_t>(gallery), R);
    worst = std::max(worst, std::abs(got.map - brute_map(table, queries, gallery, R)));
  }

  const std::size_t aba[] = {0, 1, 0};
  const double five_sixths = average_precision(std::span<const std::size_t>(aba), 0, 3);
  EmbeddingTable<double> same;
  same.modalities = {{"x", ModalityKind::kVector, 1}};
  same.dim = 2;
  for (int i = 0; i < 6; ++i) same.rows.push_back({i, 0, 2, {double(i), double(i % 3)}});
  const auto rows = same.rows_of(0);
  const double all_relevant =
      mean_average_precision(same, std::span<const std::size_t>(rows), std::span<const std::size_t>(rows)).map;

  report("mAP oracle: 100 random cases + 5/6 and all-relevant cases",
         worst <= 1e-12 && std::abs(five_sixths - 5.0 / 6.0) < 1e-15 && all_relevant == 1.0,
         "max abs diff " + fmt(worst, 3) + "; [A,B,A] AP " + fmt(five_sixths, 6) +
             "; all-relevant mAP " + fmt(all_relevant));
}

// ------------------------------------------------------------ training runs

struct RunSummary {
  RetrievalReport report;
  double seconds = 0;
};

RunSummary train_and_evaluate(const SplitDataset& data, TrainConfig cfg, const std::string& preset) {
  cfg.weights = RunConfig::apply_loss_preset(cfg.weights, preset);
  const auto t0 = Clock::now();
  auto res = train_from_scratch<float>(data.train, cfg);
  auto table = embed_dataset(data.test, res.model, true);
  return {retrieval_matrix(table), seconds_since(t0)};
}

std::string matrix_line(const RetrievalReport& rep) {
  std::string s;
  for (std::size_t a = 0; a < rep.modalities.size(); ++a)
    for (std::size_t b = 0; b < rep.modalities.size(); ++b)
      if (a != b) s += rep.modalities[a] + "->" + rep.modalities[b] + " " + fmt(rep.map[a][b], 3) + " ";
  return s;
}

void end_to_end_and_ablation() {
  const auto data = generate_synthetic(regression_dataset());
  const auto cfg = regression_training();

  const auto full = train_and_evaluate(data, cfg, "l1+l2+l3");
  report("end-to-end: every cross-modal mAP >= 0.90, <= 10000 iterations, < 10 min",
         full.report.min_cross_modal() >= 0.90 && cfg.iterations <= 10000 && full.seconds < 600,
         matrix_line(full.report) + "; " + std::to_string(cfg.iterations) + " iterations, " +
             fmt(full.seconds, 3) + " s");

  const auto l1 = train_and_evaluate(data, cfg, "l1");
  const auto l12 = train_and_evaluate(data, cfg, "l1+l2");
  const double m1 = l1.report.mean_cross_modal(), m12 = l12.report.mean_cross_modal(),
               m123 = full.report.mean_cross_modal();
  report("ablation: mAP(L1+L2) >= mAP(L1)+0.05 and mAP(L1+L2+L3) >= mAP(L1+L2)-0.02",
         m12 >= m1 + 0.05 && m123 >= m12 - 0.02,
         "mean cross-modal mAP L1 " + fmt(m1) + ", L1+L2 " + fmt(m12) + ", L1+L2+L3 " + fmt(m123));
}

/// Mean training-batch L_c over the last epoch, and L_c of the final model
/// and centers over the whole training split.
std::pair<double, double> final_center_loss(const Dataset& train, std::size_t batch, std::size_t epochs) {
  auto cfg = regression_training();
  cfg.batch_size = batch;
  cfg.epochs = epochs;
  auto res = train_from_scratch<float>(train, cfg);
  const std::size_t per_epoch = train.size() / batch;
  double last_epoch = 0;
  for (std::size_t i = res.history.size() - per_epoch; i < res.history.size(); ++i)
    last_epoch += res.history[i].metrics.center;
  last_epoch /= static_cast<double>(per_epoch);

  auto table = embed_dataset(train, res.model, false);
  double full = 0;
  for (const auto& row : table.rows)
    for (std::size_t j = 0; j < table.dim; ++j) {
      const double e = row.vector[j] - res.bank.centers(row.label, j);
      full += e * e;
    }
  full *= 0.5 / static_cast<double>(table.rows.size());
  return {last_epoch, full};
}

void batch_size_direction() {
  const auto data = generate_synthetic(regression_dataset());
  constexpr std::size_t kEpochs = 30;
  const auto [small_last, small_full] = final_center_loss(data.train, 8, kEpochs);
  const auto [large_last, large_full] = final_center_loss(data.train, 64, kEpochs);
  report("batch-size direction: final L_c(batch 64) <= final L_c(batch 8), equal epochs, mean reduction",
         large_last <= small_last,
         std::to_string(kEpochs) + " epochs; last-epoch mean L_c batch 8 " + fmt(small_last) +
             ", batch 64 " + fmt(large_last) + "; whole-split L_c batch 8 " + fmt(small_full) +
             ", batch 64 " + fmt(large_full));
}

void determinism() {
  const auto data = generate_synthetic(regression_dataset());
  auto cfg = regression_training();
  cfg.iterations = 300;
  auto once = [&] {
    auto res = train_from_scratch<double>(data.train, cfg);
    auto rep = retrieval_matrix(embed_dataset(data.test, res.model, true));
    return std::make_pair(history_csv(std::span<const HistoryRow>(res.history)),
                          report_json(rep).dump() + per_query_csv(rep) + map_matrix_csv(rep));
  };
  const auto a = once();
  const auto b = once();
  report("determinism: identical config and seed give bitwise-identical history and report (float64)",
         a == b, "300 iterations; history " + std::to_string(a.first.size()) + " bytes, report " +
                     std::to_string(a.second.size()) + " bytes");
}

// --------------------------------------------------------------- invariants

void invariance_suite() {
  std::vector<std::string> failed;
  std::size_t checked = 0;
  auto expect = [&](bool ok, const std::string& what) {
    ++checked;
    if (!ok) failed.push_back(what);
  };
  std::mt19937_64 rng(2024);

  // Batch-order permutation invariance of L_c, L_d, L_m.
  for (int trial = 0; trial < 20; ++trial) {
    auto c = random_case(5000 + trial);
    auto perm = c.batch;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::size_t> plabels;
    for (auto i : perm) plabels.push_back(c.data.instances[i].label);
    Tape<double> t1, t2;
    auto f1 = forward_batch(t1, c.data, std::span<const std::size_t>(c.batch),
                            std::span<const std::size_t>(c.labels), c.model, c.bank, c.cfg);
    auto f2 = forward_batch(t2, c.data, std::span<const std::size_t>(perm),
                            std::span<const std::size_t>(plabels), c.model, c.bank, c.cfg);
    auto close = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)); };
    expect(close(f1.l_c.item(), f2.l_c.item()), "L_c batch permutation");
    expect(close(f1.l_d.item(), f2.l_d.item()), "L_d batch permutation");
    expect(close(f1.l_m.item(), f2.l_m.item()), "L_m batch permutation");
    expect(f1.l_c.item() >= 0, "L_c >= 0");
  }

  // L_c = 0 when embeddings sit on their centers; L_d = ln K for uniform
  // predictions; L_m symmetric under modality permutation, zero iff equal.
  {
    auto bank = CenterBank<double>::init(3, 2, 1);
    const std::size_t labels[] = {2, 0};
    std::vector<double> on;
    for (auto y : labels)
      for (std::size_t j = 0; j < 2; ++j) on.push_back(bank.centers(y, j));
    Tape<double> tape;
    std::vector<Var<double>> emb{tape.constant(Tensor<double>({2, 2}, on)),
                                 tape.constant(Tensor<double>({2, 2}, on))};
    expect(cross_modal_center_loss(std::span<const Var<double>>(emb), std::span<const std::size_t>(labels), bank)
                   .item() == 0,
           "L_c zero on centers");
    expect(cross_modal_mse(std::span<const Var<double>>(emb)).item() == 0, "L_m zero for equal embeddings");
    for (std::size_t K : {2, 3, 5, 10}) {
      auto uniform = log_softmax(tape.constant(Tensor<double>::zeros({2, K})));
      std::vector<Var<double>> lp{uniform};
      const std::size_t y[] = {0, K - 1};
      expect(std::abs(discriminative_loss(std::span<const Var<double>>(lp), std::span<const std::size_t>(y)).item() -
                      std::log(double(K))) < 1e-12,
             "L_d = ln K uniform");
    }
    std::vector<Var<double>> three;
    for (int m = 0; m < 3; ++m)
      three.push_back(tape.constant(Tensor<double>({2, 2}, cmcl::testing::random_vector(4, rng))));
    const double base = cross_modal_mse(std::span<const Var<double>>(three)).item();
    std::vector<Var<double>> rotated{three[2], three[0], three[1]};
    expect(std::abs(cross_modal_mse(std::span<const Var<double>>(rotated)).item() - base) < 1e-12,
           "L_m modality symmetry");
    expect(base > 0, "L_m positive for distinct embeddings");
  }

  // Set-encoder permutation invariance, bitwise.
  {
    ModelConfig mc{{{"p", ModalityKind::kPointSet, 3}}, 2, 4, 6, 4, 3};
    auto model = Model<float>::init(mc);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 2 + trial % 6;
      std::vector<std::vector<float>> pts(n);
      for (auto& p : pts)
        for (double x : cmcl::testing::random_vector(3, rng)) p.push_back(static_cast<float>(x));
      auto flatten = [](const std::vector<std::vector<float>>& ps) {
        Sample s;
        s.rows = ps.size();
        for (const auto& p : ps) s.values.insert(s.values.end(), p.begin(), p.end());
        return s;
      };
      const auto a = embed(flatten(pts), model.encoders[0]);
      std::shuffle(pts.begin(), pts.end(), rng);
      expect(a == embed(flatten(pts), model.encoders[0]), "set encoder permutation");
    }
  }

  // Ranking and mAP invariant under positive scaling; AP and mAP in [0,1];
  // self-exclusion in-domain.
  for (int trial = 0; trial < 20; ++trial) {
    EmbeddingTable<double> table;
    table.modalities = {{"a", ModalityKind::kVector, 1}, {"b", ModalityKind::kVector, 1}};
    table.dim = 3;
    for (std::size_t m = 0; m < 2; ++m)
      for (int i = 0; i < 12; ++i)
        table.rows.push_back({i, m, static_cast<std::size_t>(i % 3), cmcl::testing::random_vector(3, rng)});
    auto scaled = table;
    const double s = 0.1 + 10.0 * std::uniform_real_distribution<double>()(rng);
    for (auto& r : scaled.rows)
      for (auto& x : r.vector) x *= s;
    const auto qa = table.rows_of(0), gb = table.rows_of(1);
    const auto& q = table.rows[qa[0]].vector;
    const auto& qs = scaled.rows[qa[0]].vector;
    expect(rank_gallery(std::span<const double>(q), table, std::span<const std::size_t>(gb)) ==
               rank_gallery(std::span<const double>(qs), scaled, std::span<const std::size_t>(gb)),
           "ranking scale invariance");
    const auto rep = retrieval_matrix(table), rep_s = retrieval_matrix(scaled);
    for (std::size_t a = 0; a < 2; ++a)
      for (std::size_t b = 0; b < 2; ++b) {
        expect(std::abs(rep.map[a][b] - rep_s.map[a][b]) < 1e-12, "mAP scale invariance");
        expect(rep.map[a][b] >= 0 && rep.map[a][b] <= 1, "mAP in [0,1]");
        for (const auto& pq : rep.per_query[a][b]) expect(pq.ap >= 0 && pq.ap <= 1, "AP in [0,1]");
      }
  }
  {
    // Every row its own class: with self-exclusion nothing is relevant.
    EmbeddingTable<double> table;
    table.modalities = {{"a", ModalityKind::kVector, 1}};
    table.dim = 2;
    for (int i = 0; i < 5; ++i) table.rows.push_back({i, 0, static_cast<std::size_t>(i), {double(i), 0}});
    const auto rows = table.rows_of(0);
    expect(mean_average_precision(table, std::span<const std::size_t>(rows), std::span<const std::size_t>(rows)).map == 0,
           "in-domain self-exclusion");
  }

  // Normalized tables have unit norms.
  {
    auto g = regression_dataset();
    g.n_train = 20;
    g.n_test = 8;
    const auto data = generate_synthetic(g);
    auto model = Model<double>::init(model_config_for(data.train, 8, 16, 8, 1));
    const auto table = embed_dataset(data.test, model, true);
    for (const auto& r : table.rows) {
      double n = 0;
      for (double x : r.vector) n += x * x;
      expect(std::abs(std::sqrt(n) - 1) <= 1e-6, "unit norm");
    }
  }

  // Repeated center updates with fixed features approach the class mean.
  {
    auto bank = CenterBank<double>::init(2, 3, 4, 0.5);
    const std::size_t labels[] = {0, 0, 1};
    Tensor<double> v({3, 3}, cmcl::testing::random_vector(9, rng));
    const Tensor<double>* emb[] = {&v};
    auto dist = [&](std::size_t j) {
      double mean[3] = {0, 0, 0};
      std::size_t n = 0;
      for (std::size_t i = 0; i < 3; ++i)
        if (labels[i] == j) {
          ++n;
          for (std::size_t d = 0; d < 3; ++d) mean[d] += v(i, d);
        }
      double s = 0;
      for (std::size_t d = 0; d < 3; ++d) s += std::pow(bank.centers(j, d) - mean[d] / double(n), 2);
      return s;
    };
    for (int step = 0; step < 10; ++step) {
      const double before0 = dist(0), before1 = dist(1);
      apply_center_update(bank, center_delta<double>(std::span<const Tensor<double>* const>(emb),
                                                      std::span<const std::size_t>(labels), bank));
      expect(dist(0) < before0 || before0 < 1e-24, "center approaches class mean");
      expect(dist(1) < before1 || before1 < 1e-24, "center approaches class mean");
    }
  }

  std::string detail = std::to_string(checked - failed.size()) + "/" + std::to_string(checked) + " checks";
  if (!failed.empty()) detail += "; first failure: " + failed.front();
  report("invariance suite: permutation, scaling, bounds, symmetry, self-exclusion", failed.empty(), detail);
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  gradient_suite();
  center_oracle();
  map_oracle();
  end_to_end_and_ablation();
  batch_size_direction();
  determinism();
  invariance_suite();
  std::printf("%d criteria failed; total %.1f s\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
