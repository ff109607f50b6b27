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


// Retrieval evaluation in the common embedding space.
//
// Every (instance, modality) of a dataset is embedded once. A query of modality
// s is ranked against all rows of modality t by ascending Euclidean distance
// (ties by ascending gallery position). Average precision over the top R is
//
//   AP = (1 / N_rel) * sum_{r=1..R} precision@r * rel(r)
//
// with N_rel the relevant items among those R, and AP = 0 when N_rel = 0. A
// query's own row is never part of its gallery, which only matters for
// in-domain (s == t) retrieval.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmcl/data.hpp"
#include "cmcl/error.hpp"
#include "cmcl/io.hpp"
#include "cmcl/model.hpp"

namespace cmcl {

template <class T>
struct EmbeddingRow {
  std::int64_t instance_id = 0;
  std::size_t modality = 0;
  std::size_t label = 0;
  std::vector<T> vector;
};

template <class T>
struct EmbeddingTable {
  std::vector<ModalitySpec> modalities;
  std::size_t dim = 0;
  bool normalized = false;
  std::vector<EmbeddingRow<T>> rows;

  /// Row positions of one modality, in table order.
  std::vector<std::size_t> rows_of(std::size_t modality) const {
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < rows.size(); ++r)
      if (rows[r].modality == modality) out.push_back(r);
    return out;
  }
};

/// Scales `v` to unit L2 norm; a zero vector is an error.
template <class T>
void normalize_in_place(std::vector<T>& v) {
  double norm = 0;
  for (T x : v) norm += static_cast<double>(x) * static_cast<double>(x);
  norm = std::sqrt(norm);
  if (norm == 0) throw ContractError("zero vector cannot be normalized");
  for (T& x : v) x = static_cast<T>(static_cast<double>(x) / norm);
}

template <class T>
void normalize_table(EmbeddingTable<T>& table) {
  for (auto& row : table.rows) normalize_in_place(row.vector);
  table.normalized = true;
}

/// One row per (instance, modality), instance-major. Embeddings are computed
/// in chunks with frozen parameters.
template <class T>
EmbeddingTable<T> embed_dataset(const Dataset& data, const Model<T>& model, bool normalize) {
  if (data.num_modalities() != model.encoders.size()) {
    throw ShapeError("dataset has " + std::to_string(data.num_modalities()) +
                     " modalities, model has " + std::to_string(model.encoders.size()));
  }
  for (std::size_t m = 0; m < data.num_modalities(); ++m) {
    if (data.modalities[m].dim != model.encoders[m].spec.dim ||
        data.modalities[m].kind != model.encoders[m].spec.kind) {
      throw ShapeError("modality '" + data.modalities[m].name + "' has dim " +
                       std::to_string(data.modalities[m].dim) + " but the checkpoint expects " +
                       std::to_string(model.encoders[m].spec.dim));
    }
  }
  const std::size_t k = model.config.embed_dim;
  const std::size_t M = data.num_modalities();
  EmbeddingTable<T> table{data.modalities, k, false, {}};
  table.rows.resize(data.size() * M);
  constexpr std::size_t kChunk = 256;
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t start = 0; start < data.size(); start += kChunk) {
      const std::size_t end = std::min(data.size(), start + kChunk);
      std::vector<const Sample*> samples;
      for (std::size_t i = start; i < end; ++i) samples.push_back(&data.instances[i].samples[m]);
      auto values = embed_batch(std::span<const Sample* const>(samples), model.encoders[m]);
      for (std::size_t i = start; i < end; ++i) {
        const auto& inst = data.instances[i];
        auto first = values.begin() + static_cast<std::ptrdiff_t>((i - start) * k);
        table.rows[i * M + m] = {inst.id, m, inst.label, std::vector<T>(first, first + k)};
      }
    }
  }
  if (normalize) normalize_table(table);
  return table;
}

/// Gallery positions (indices into `gallery`) by ascending distance to
/// `query`; equal distances keep ascending position.
template <class T>
std::vector<std::size_t> rank_gallery(std::span<const T> query, const EmbeddingTable<T>& table,
                                      std::span<const std::size_t> gallery) {
  if (gallery.empty()) throw ContractError("rank_gallery: empty gallery");
  std::vector<double> dist(gallery.size());
  for (std::size_t g = 0; g < gallery.size(); ++g) {
    const auto& v = table.rows[gallery[g]].vector;
    if (v.size() != query.size()) {
      throw ShapeError("rank_gallery: query has " + std::to_string(query.size()) +
                       " dims, gallery row has " + std::to_string(v.size()));
    }
    double s = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      const double d = static_cast<double>(query[j]) - static_cast<double>(v[j]);
      s += d * d;
    }
    dist[g] = s;
  }
  std::vector<std::size_t> order(gallery.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&dist](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  return order;
}

/// AP over the first R entries of a ranked label list.
inline double average_precision(std::span<const std::size_t> ranked_labels,
                                std::size_t query_label, std::size_t R) {
  if (R > ranked_labels.size()) {
    throw ContractError("average_precision: R = " + std::to_string(R) + " exceeds gallery size " +
                        std::to_string(ranked_labels.size()));
  }
  double sum = 0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < R; ++r) {
    if (ranked_labels[r] != query_label) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  return hits == 0 ? 0.0 : sum / static_cast<double>(hits);
}

struct QueryAp {
  std::int64_t instance_id = 0;
  std::size_t label = 0;
  double ap = 0;
};

struct MapResult {
  double map = 0;
  std::size_t r_used = 0;
  std::size_t gallery_size = 0;
  std::vector<QueryAp> per_query;
};

/// Mean AP of every query row against the gallery rows. R == 0 means the
/// whole gallery. A query's own row is dropped from its gallery.
template <class T>
MapResult mean_average_precision(const EmbeddingTable<T>& table,
                                 std::span<const std::size_t> queries,
                                 std::span<const std::size_t> gallery, std::size_t R = 0) {
  if (queries.empty()) throw ContractError("mean_average_precision: no queries");
  if (gallery.empty()) throw ContractError("mean_average_precision: empty gallery");
  MapResult out;
  double total = 0;
  std::vector<std::size_t> own_gallery;
  std::vector<std::size_t> labels;
  for (std::size_t q : queries) {
    own_gallery.clear();
    for (std::size_t g : gallery)
      if (g != q) own_gallery.push_back(g);
    if (own_gallery.empty()) throw ContractError("mean_average_precision: empty gallery");
    const std::size_t r = R == 0 ? own_gallery.size() : R;
    if (r > own_gallery.size()) {
      throw ContractError("mean_average_precision: R = " + std::to_string(r) +
                          " exceeds gallery size " + std::to_string(own_gallery.size()));
    }
    const auto& qrow = table.rows[q];
    auto order = rank_gallery(std::span<const T>(qrow.vector), table,
                              std::span<const std::size_t>(own_gallery));
    labels.resize(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) labels[i] = table.rows[own_gallery[order[i]]].label;
    const double ap = average_precision(std::span<const std::size_t>(labels), qrow.label, r);
    out.per_query.push_back({qrow.instance_id, qrow.label, ap});
    total += ap;
    out.r_used = r;
    out.gallery_size = own_gallery.size();
  }
  out.map = total / static_cast<double>(queries.size());
  return out;
}

struct RetrievalReport {
  std::vector<std::string> modalities;
  std::vector<std::vector<double>> map;  // [source][target]
  std::vector<std::vector<std::size_t>> r_used;
  std::vector<std::vector<std::size_t>> gallery_sizes;
  std::vector<std::vector<std::vector<QueryAp>>> per_query;
  bool normalized = false;

  /// Mean over the off-diagonal (cross-modal) entries.
  double mean_cross_modal() const {
    double s = 0;
    std::size_t n = 0;
    for (std::size_t a = 0; a < map.size(); ++a)
      for (std::size_t b = 0; b < map.size(); ++b)
        if (a != b) {
          s += map[a][b];
          ++n;
        }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
  }
  double min_cross_modal() const {
    double lo = 1.0;
    for (std::size_t a = 0; a < map.size(); ++a)
      for (std::size_t b = 0; b < map.size(); ++b)
        if (a != b) lo = std::min(lo, map[a][b]);
    return lo;
  }
};

/// mAP for every ordered (source, target) modality pair.
template <class T>
RetrievalReport retrieval_matrix(const EmbeddingTable<T>& table, std::size_t R = 0) {
  const std::size_t M = table.modalities.size();
  if (M == 0) throw ContractError("retrieval_matrix: table has no modalities");
  RetrievalReport rep;
  rep.normalized = table.normalized;
  for (const auto& m : table.modalities) rep.modalities.push_back(m.name);
  rep.map.assign(M, std::vector<double>(M, 0));
  rep.r_used.assign(M, std::vector<std::size_t>(M, 0));
  rep.gallery_sizes.assign(M, std::vector<std::size_t>(M, 0));
  rep.per_query.assign(M, std::vector<std::vector<QueryAp>>(M));
  std::vector<std::vector<std::size_t>> rows(M);
  for (std::size_t m = 0; m < M; ++m) {
    rows[m] = table.rows_of(m);
    if (rows[m].empty()) {
      throw ContractError("retrieval_matrix: no embeddings for modality '" +
                          table.modalities[m].name + "'");
    }
  }
  for (std::size_t s = 0; s < M; ++s)
    for (std::size_t t = 0; t < M; ++t) {
      auto res = mean_average_precision(table, std::span<const std::size_t>(rows[s]),
                                        std::span<const std::size_t>(rows[t]), R);
      rep.map[s][t] = res.map;
      rep.r_used[s][t] = res.r_used;
      rep.gallery_sizes[s][t] = res.gallery_size;
      rep.per_query[s][t] = std::move(res.per_query);
    }
  return rep;
}

/// CSV with header instance_id,modality,label,e0,...,e{k-1}.
template <class T>
std::string embeddings_csv(const EmbeddingTable<T>& table) {
  std::string out = "instance_id,modality,label";
  for (std::size_t j = 0; j < table.dim; ++j) out += ",e" + std::to_string(j);
  out += '\n';
  for (const auto& row : table.rows) {
    out += std::to_string(row.instance_id) + ',' + table.modalities[row.modality].name + ',' +
           std::to_string(row.label);
    for (T x : row.vector) {
      out += ',';
      out += io::format_real(x);
    }
    out += '\n';
  }
  return out;
}

inline nlohmann::json report_json(const RetrievalReport& rep) {
  nlohmann::json j;
  j["modalities"] = rep.modalities;
  j["normalized"] = rep.normalized;
  j["map"] = rep.map;
  j["R"] = rep.r_used;
  j["gallery_sizes"] = rep.gallery_sizes;
  j["mean_cross_modal_map"] = rep.mean_cross_modal();
  return j;
}

/// Plot-ready CSV with header source,target,map.
inline std::string map_matrix_csv(const RetrievalReport& rep) {
  std::string out = "source,target,map\n";
  for (std::size_t s = 0; s < rep.modalities.size(); ++s)
    for (std::size_t t = 0; t < rep.modalities.size(); ++t)
      out += rep.modalities[s] + ',' + rep.modalities[t] + ',' + io::format_real(rep.map[s][t]) +
             '\n';
  return out;
}

/// CSV with header source,target,instance_id,label,ap.
inline std::string per_query_csv(const RetrievalReport& rep) {
  std::string out = "source,target,instance_id,label,ap\n";
  for (std::size_t s = 0; s < rep.modalities.size(); ++s)
    for (std::size_t t = 0; t < rep.modalities.size(); ++t)
      for (const auto& q : rep.per_query[s][t])
        out += rep.modalities[s] + ',' + rep.modalities[t] + ',' + std::to_string(q.instance_id) +
               ',' + std::to_string(q.label) + ',' + io::format_real(q.ap) + '\n';
  return out;
}

}  // namespace cmcl
