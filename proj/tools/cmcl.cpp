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


// cmcl: gen-data, train, embed, eval and retrieve.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cmcl/cmcl.hpp"

namespace fs = std::filesystem;
using namespace cmcl;

namespace {

struct Invocation {
  std::string config_path;
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::Option*> options;
};

std::string flag_name(const std::string& key) {
  std::string out = "--";
  for (char c : key) out += c == '_' ? '-' : c;
  return out;
}

CLI::App* add_command(CLI::App& app, const char* name, const char* help, Command cmd,
                      Invocation& inv) {
  auto* sub = app.add_subcommand(name, help);
  sub->add_option("-c,--config", inv.config_path, "JSON config file");
  for (const auto& key : config_schema()) {
    if (!(key.commands & cmd)) continue;
    auto& slot = inv.flags[key.name];
    inv.options[key.name] = sub->add_option(flag_name(key.name), slot, key.help);
  }
  return sub;
}

RunConfig resolve(const Invocation& inv) {
  RunConfig cfg;
  if (!inv.config_path.empty()) cfg.merge_file(inv.config_path);
  for (const auto& [name, opt] : inv.options)
    if (opt->count() > 0) cfg.set(name, parse_flag_value(name, inv.flags.at(name)));
  return cfg;
}

fs::path prepare_out(const RunConfig& cfg) {
  fs::path out = cfg.str("out_dir");
  fs::create_directories(out);
  io::write_file((out / "resolved_config.json").string(), cfg.json().dump(2) + "\n");
  return out;
}

Dataset pick_split(SplitDataset data, const RunConfig& cfg) {
  return cfg.test_split() ? std::move(data.test) : std::move(data.train);
}

void gen_data(const RunConfig& cfg) {
  const auto g = cfg.generator();
  const auto out = prepare_out(cfg);
  const auto manifest = write_dataset(out, generate_synthetic(g));
  std::cout << "wrote " << manifest.string() << "\n";
}

template <class T>
void train(const RunConfig& cfg) {
  const auto tc = cfg.train();
  const auto data = load_dataset(cfg.manifest_path());
  const auto out = prepare_out(cfg);
  auto result = train_from_scratch<T>(data.train, tc, cfg.uint("embed_dim"),
                                      cfg.uint("encoder_hidden"), cfg.uint("head_hidden"));
  save_checkpoint(out / "checkpoint.txt", result.model);
  save_centers(out / "centers.txt", result.bank);
  io::write_file((out / "loss_history.csv").string(),
                 history_csv(std::span<const HistoryRow>(result.history)));
  std::cout << "trained " << result.history.size() << " iterations";
  if (!result.history.empty()) std::cout << ", final loss " << result.history.back().metrics.loss;
  std::cout << "\n";
}

template <class T>
EmbeddingTable<T> embed_split(const RunConfig& cfg) {
  const auto model = load_checkpoint<T>(cfg.required("checkpoint"));
  const auto data = pick_split(load_dataset(cfg.manifest_path()), cfg);
  return embed_dataset(data, model, cfg.flag("normalize"));
}

template <class T>
void embed(const RunConfig& cfg) {
  const auto table = embed_split<T>(cfg);
  const auto out = prepare_out(cfg);
  io::write_file((out / "embeddings.csv").string(), embeddings_csv(table));
  std::cout << "wrote " << table.rows.size() << " embeddings\n";
}

template <class T>
void eval(const RunConfig& cfg) {
  const auto table = embed_split<T>(cfg);
  const auto rep = retrieval_matrix(table, cfg.uint("R"));
  const auto out = prepare_out(cfg);
  io::write_file((out / "report.json").string(), report_json(rep).dump(2) + "\n");
  io::write_file((out / "map_matrix.csv").string(), map_matrix_csv(rep));
  io::write_file((out / "per_query_ap.csv").string(), per_query_csv(rep));
  const std::size_t M = rep.modalities.size();
  for (std::size_t s = 0; s < M; ++s) {
    for (std::size_t t = 0; t < M; ++t)
      std::cout << (t ? " " : "") << rep.modalities[s] << "->" << rep.modalities[t] << "="
                << io::format_real(rep.map[s][t], 4);
    std::cout << "\n";
  }
}

template <class T>
void retrieve(const RunConfig& cfg) {
  if (cfg.json().at("query_id").is_null()) throw ConfigError("query_id", "required");
  const auto query_id = cfg.json().at("query_id").get<std::int64_t>();
  const auto model = load_checkpoint<T>(cfg.required("checkpoint"));
  const auto data = pick_split(load_dataset(cfg.manifest_path()), cfg);
  const auto src = data.modality_index(cfg.required("source"));
  const auto tgt = data.modality_index(cfg.required("target"));
  const auto top_n = cfg.uint("top_n");
  if (top_n == 0) throw ConfigError("top_n", "must be positive");
  const auto table = embed_dataset(data, model, cfg.flag("normalize"));

  std::size_t q = table.rows.size();
  for (std::size_t r = 0; r < table.rows.size(); ++r)
    if (table.rows[r].instance_id == query_id && table.rows[r].modality == src) q = r;
  if (q == table.rows.size()) {
    throw ContractError("unknown instance id " + std::to_string(query_id) + " in the " +
                        cfg.str("split") + " split");
  }
  std::vector<std::size_t> gallery;
  for (auto r : table.rows_of(tgt))
    if (r != q) gallery.push_back(r);
  const auto& query = table.rows[q].vector;
  const auto order = rank_gallery(std::span<const T>(query), table, std::span<const std::size_t>(gallery));

  std::string csv = "rank,instance_id,label,distance,relevant\n";
  for (std::size_t i = 0; i < std::min<std::size_t>(top_n, order.size()); ++i) {
    const auto& row = table.rows[gallery[order[i]]];
    double d = 0;
    for (std::size_t j = 0; j < query.size(); ++j) {
      const double e = static_cast<double>(query[j]) - static_cast<double>(row.vector[j]);
      d += e * e;
    }
    csv += std::to_string(i + 1) + ',' + std::to_string(row.instance_id) + ',' +
           std::to_string(row.label) + ',' + io::format_real(std::sqrt(d)) + ',' +
           (row.label == table.rows[q].label ? "1" : "0") + '\n';
  }
  const auto out = prepare_out(cfg);
  io::write_file((out / "retrieval.csv").string(), csv);
  std::cout << csv;
}


}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal center loss toolkit"};
  app.require_subcommand(1);
  Invocation gen_inv, train_inv, embed_inv, eval_inv, retr_inv;
  auto* gen_cmd = add_command(app, "gen-data", "Generate a synthetic multi-modal dataset", kGenData, gen_inv);
  auto* train_cmd = add_command(app, "train", "Train encoders, head and centers", kTrain, train_inv);
  auto* embed_cmd = add_command(app, "embed", "Export embeddings of one split", kEmbed, embed_inv);
  auto* eval_cmd = add_command(app, "eval", "Source x target mAP report", kEval, eval_inv);
  auto* retr_cmd = add_command(app, "retrieve", "Rank a gallery for one query", kRetrieve, retr_inv);
  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_cmd->parsed()) {
      gen_data(resolve(gen_inv));
    } else if (train_cmd->parsed()) {
      auto cfg = resolve(train_inv);
      cfg.double_precision() ? train<double>(cfg) : train<float>(cfg);
    } else if (embed_cmd->parsed()) {
      auto cfg = resolve(embed_inv);
      cfg.double_precision() ? embed<double>(cfg) : embed<float>(cfg);
    } else if (eval_cmd->parsed()) {
      auto cfg = resolve(eval_inv);
      cfg.double_precision() ? eval<double>(cfg) : eval<float>(cfg);
    } else if (retr_cmd->parsed()) {
      auto cfg = resolve(retr_inv);
      cfg.double_precision() ? retrieve<double>(cfg) : retrieve<float>(cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
