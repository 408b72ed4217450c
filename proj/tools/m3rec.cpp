// Copyright 2026 the m3rec authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface: gen | train | eval | recommend | group | check.
// Exit codes: 0 success, 2 configuration/input error, 3 data-lookup error,
// 1 internal error. All randomness flows from --seed / the config seed; no
// wall-clock entropy is used anywhere, so identical inputs give identical
// bytes on stdout and on disk.
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "m3rec/m3rec.hpp"

namespace {

using namespace m3rec;

int log_level() {
  static const int level = [] {
    const char* env = std::getenv("M3REC_LOG");
    return env ? std::atoi(env) : 0;
  }();
  return level;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "[m3rec] " << msg << "\n";
}

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      // world
      "users", "items", "categories", "friend_clusters", "rho", "seed", "tasks",
      "main_len_min", "main_len_max", "play_len_min", "play_len_max",
      "friend_len_min", "friend_len_max", "latent_dim", "affinity_sharpness",
      // model / training
      "dim", "layers", "max_seq_len", "learning_rate", "batch_size", "epochs",
      "adam_beta1", "adam_beta2", "adam_eps", "group_weight", "group_k"};
  return keys;
}

KvConfig load_config(const std::string& path) {
  KvConfig cfg = path.empty() ? KvConfig() : KvConfig::parse_file(path);
  cfg.reject_unknown(known_keys(), {"weight."});
  return cfg;
}

WorldConfig world_from(const KvConfig& cfg) {
  WorldConfig wc;
  wc.users = static_cast<std::uint32_t>(cfg.get_u64("users", wc.users));
  wc.items = static_cast<std::uint32_t>(cfg.get_u64("items", wc.items));
  wc.categories = static_cast<std::uint32_t>(cfg.get_u64("categories", wc.categories));
  wc.friend_clusters =
      static_cast<std::uint32_t>(cfg.get_u64("friend_clusters", wc.friend_clusters));
  wc.rho = cfg.get_double("rho", wc.rho);
  wc.seed = cfg.get_u64("seed", wc.seed);
  wc.task_ids = cfg.get_list("tasks", wc.task_ids);
  wc.main_len.min_len =
      static_cast<std::uint32_t>(cfg.get_u64("main_len_min", wc.main_len.min_len));
  wc.main_len.max_len =
      static_cast<std::uint32_t>(cfg.get_u64("main_len_max", wc.main_len.max_len));
  wc.play_len.min_len =
      static_cast<std::uint32_t>(cfg.get_u64("play_len_min", wc.play_len.min_len));
  wc.play_len.max_len =
      static_cast<std::uint32_t>(cfg.get_u64("play_len_max", wc.play_len.max_len));
  wc.friend_len.min_len =
      static_cast<std::uint32_t>(cfg.get_u64("friend_len_min", wc.friend_len.min_len));
  wc.friend_len.max_len =
      static_cast<std::uint32_t>(cfg.get_u64("friend_len_max", wc.friend_len.max_len));
  wc.latent_dim = static_cast<std::uint32_t>(cfg.get_u64("latent_dim", wc.latent_dim));
  wc.affinity_sharpness = cfg.get_double("affinity_sharpness", wc.affinity_sharpness);
  return wc;
}

std::vector<std::size_t> parse_n_list(const std::string& s) {
  std::vector<std::size_t> ns;
  std::istringstream is(s);
  std::string part;
  while (std::getline(is, part, ',')) {
    try {
      std::size_t pos = 0;
      const unsigned long v = std::stoul(part, &pos);
      if (pos != part.size() || v < 1) throw std::invalid_argument("");
      ns.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("invalid n list entry: '" + part + "'");
    }
  }
  if (ns.empty()) throw ConfigError("empty n list");
  return ns;
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

int cmd_gen(const std::string& config_path, const std::string& out_dir,
            std::optional<std::uint64_t> seed, std::optional<double> rho) {
  KvConfig cfg = load_config(config_path);
  WorldConfig wc = world_from(cfg);
  if (seed) wc.seed = *seed;
  if (rho) wc.rho = *rho;
  Dataset ds = generate(wc);
  save_dataset(ds, out_dir);
  log_info("generated dataset in " + out_dir);
  return 0;
}

struct TrainOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> epochs;
  std::optional<double> lr;
  std::optional<std::uint64_t> batch;
  std::optional<std::uint64_t> dim;
};

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& ckpt_out, const std::string& history_out,
              const TrainOverrides& ov) {
  KvConfig cfg = load_config(config_path);
  Dataset ds = load_dataset(data_dir);

  ModelConfig mc;
  mc.dim = cfg.get_u64("dim", 128);
  mc.layers = cfg.get_u64("layers", 1);
  mc.max_seq_len = cfg.get_u64("max_seq_len", 50);
  mc.seed = cfg.get_u64("seed", 1);
  if (ov.seed) mc.seed = *ov.seed;
  if (ov.dim) mc.dim = *ov.dim;

  std::vector<TaskSpec> tasks = ds.tasks;
  for (TaskSpec& ts : tasks)
    ts.weight = cfg.get_double("weight." + ts.task_id, ts.weight);

  TrainConfig tc;
  tc.learning_rate = cfg.get_double("learning_rate", 1e-4);
  tc.batch_size = cfg.get_u64("batch_size", 128);
  tc.epochs = cfg.get_u64("epochs", 10);
  tc.beta1 = cfg.get_double("adam_beta1", 0.9);
  tc.beta2 = cfg.get_double("adam_beta2", 0.999);
  tc.eps = cfg.get_double("adam_eps", 1e-8);
  tc.group_weight = cfg.get_double("group_weight", 0.0);
  tc.group_count = cfg.get_u64("group_k", 0);
  tc.seed = mc.seed;
  if (ov.epochs) tc.epochs = *ov.epochs;
  if (ov.lr) tc.learning_rate = *ov.lr;
  if (ov.batch) tc.batch_size = *ov.batch;

  M3RecModel model =
      init_model(ds.item_count, ds.user_count, ds.category_count, tasks, mc);
  const SplitResult sp = split(ds);
  TrainHistory h = train(model, sp.train, tc, [](std::size_t epoch, const M3RecModel&) {
    log_info("epoch " + std::to_string(epoch) + " done");
  });
  save_checkpoint(model, ckpt_out);
  if (!history_out.empty()) save_history(h, model.tasks, history_out);
  log_info("checkpoint written to " + ckpt_out);
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir,
             const std::string& n_list, std::string label) {
  M3RecModel model = load_checkpoint(ckpt);
  Dataset ds = load_dataset(data_dir);
  const auto ns = parse_n_list(n_list);
  if (label.empty()) label = std::filesystem::path(ckpt).stem().string();
  MetricReport rep = evaluate(model, ds, ns, label);
  rep.emit_tsv(std::cout);
  return 0;
}

int cmd_recommend(const std::string& ckpt, const std::string& data_dir,
                  std::uint64_t user, const std::string& task, std::size_t n) {
  M3RecModel model = load_checkpoint(ckpt);
  Dataset ds = load_dataset(data_dir);
  if (user >= ds.user_count)
    throw LookupError("unknown user " + std::to_string(user) + " (dataset has " +
                      std::to_string(ds.user_count) + ")");
  const std::size_t ti = ds.task_index(task);
  const ActionSequence& s = ds.sequences[ti][static_cast<std::uint32_t>(user)];
  if (s.empty())
    throw LookupError("user " + std::to_string(user) + " has no " + task +
                      " sequence");
  const auto ids = s.ids();
  auto ranked = recommend(model, task, ids, n);
  char buf[64];
  for (const auto& [id, sc] : ranked) {
    std::snprintf(buf, sizeof(buf), "%.6f", sc);
    std::cout << id << "\t" << buf << "\n";
  }
  return 0;
}

int cmd_group_build(const std::string& ckpt, const std::string& data_dir,
                    const std::string& out, std::size_t k,
                    std::optional<std::uint64_t> seed) {
  M3RecModel model = load_checkpoint(ckpt);
  Dataset ds = load_dataset(data_dir);
  const std::uint64_t s = seed ? *seed : model.seed;
  auto groups = build_groups(model, ds, k, s);
  save_groups(groups, out);
  log_info("wrote " + std::to_string(groups.size()) + " groups to " + out);
  return 0;
}

int cmd_group_recommend(const std::string& ckpt, const std::string& data_dir,
                        const std::string& groups_path, std::uint64_t group_id,
                        std::size_t n) {
  M3RecModel model = load_checkpoint(ckpt);
  Dataset ds = load_dataset(data_dir);
  const auto groups = load_groups(groups_path);
  const UserGroup* found = nullptr;
  for (const auto& g : groups)
    if (g.group_id == group_id) found = &g;
  if (!found) throw LookupError("unknown group " + std::to_string(group_id));
  auto ranked = group_recommend(model, ds, found->members, n,
                                static_cast<std::uint32_t>(group_id));
  char buf[64];
  for (const auto& [id, sc] : ranked) {
    std::snprintf(buf, sizeof(buf), "%.6f", sc);
    std::cout << id << "\t" << buf << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// check: gradient and oracle self-tests
// ---------------------------------------------------------------------------

int cmd_check() {
  int failures = 0;
  auto report = [&](const std::string& name, bool ok, const std::string& detail = "") {
    std::cout << (ok ? "ok   " : "FAIL ") << name;
    if (!ok && !detail.empty()) std::cout << " (" << detail << ")";
    std::cout << "\n";
    if (!ok) ++failures;
  };

  {  // gradient oracle over the composed multi-task + group loss
    ModelConfig mc;
    mc.dim = 3;
    mc.seed = 5;
    std::vector<TaskSpec> tasks{standard_task("download"), standard_task("category"),
                                standard_task("friend")};
    M3RecModel m = init_model(5, 5, 4, tasks, mc);
    std::vector<std::vector<Example>> batches{
        {{{0, 2, 1}, 3}}, {{{0, 3}, 1}}, {{{1, 2}, 4}}};
    std::vector<double> weights{1.0, 0.8, 1.2};
    std::vector<GroupExample> gbatch{{{0, 2}, {1, 3, 2}, 4}};
    auto params = m.parameters();
    auto eval = [&](bool with_grad) {
      Tape t;
      Var loss = add(joint_loss(t, m, batches, weights),
                     scalar_affine(group_task_loss(t, m, gbatch), 0.9, 0.0));
      if (with_grad) {
        m.zero_grads();
        t.backward(loss);
      }
      return loss.value()[0];
    };
    GradCheckReport rep;
    const double err =
        finite_diff_check(std::span<Parameter* const>(params), eval, 1e-4, &rep);
    report("gradient oracle (joint + group loss)", err < 1e-4,
           "max rel err " + std::to_string(err) + " at " + rep.worst_param);
  }

  {  // connection matrix against direct edge enumeration
    std::vector<std::uint32_t> fig{1, 2, 3, 2, 4};
    SequenceGraph g = build_graph(std::span<const std::uint32_t>(fig));
    bool ok = g.a_out(1, 2) == 0.5 && g.a_out(1, 3) == 0.5 && g.a_in(1, 0) == 0.5 &&
              g.a_in(1, 2) == 0.5 && g.last_node_index == 3;
    Rng rng(2);
    for (int trial = 0; ok && trial < 200; ++trial) {
      std::vector<std::uint32_t> ids(1 + rng.below(10));
      for (auto& id : ids) id = static_cast<std::uint32_t>(rng.below(5));
      SequenceGraph got = build_graph(std::span<const std::uint32_t>(ids));
      std::set<std::pair<std::size_t, std::size_t>> edges;
      std::map<std::uint32_t, std::size_t> pos;
      for (auto id : ids)
        if (!pos.count(id)) pos[id] = pos.size();
      for (std::size_t j = 0; j + 1 < ids.size(); ++j)
        edges.insert({pos[ids[j]], pos[ids[j + 1]]});
      std::vector<std::size_t> outd(pos.size(), 0), ind(pos.size(), 0);
      for (auto [u, v] : edges) {
        outd[u]++;
        ind[v]++;
      }
      for (auto [u, v] : edges) {
        if (got.a_out(u, v) != 1.0 / double(outd[u])) ok = false;
        if (got.a_in(v, u) != 1.0 / double(ind[v])) ok = false;
      }
    }
    report("connection matrix vs edge enumeration", ok);
  }

  {  // softmax and cross-entropy closed forms
    Tape t;
    Matrix z(7, 1);
    const double loss = softmax_cross_entropy(t.constant(z), 2).value()[0];
    bool ok = std::abs(loss - std::log(7.0)) < 1e-12;
    Matrix probs = softmax(t.constant(Matrix::column({0.3, -1.0, 2.0}))).value();
    double sum = 0.0;
    for (std::size_t i = 0; i < 3; ++i) sum += probs[i];
    ok = ok && std::abs(sum - 1.0) <= 1e-12;
    report("softmax / cross-entropy closed forms", ok);
  }

  {  // Adam first-step magnitude
    Parameter p("p", Matrix::column({1.0}));
    p.grad = Matrix::column({-3.7});
    AdamState st;
    AdamConfig ac;
    ac.learning_rate = 1e-3;
    adam_step(p, st, ac, 1);
    report("adam first-step closed form", std::abs(p.value[0] - 1.0 - 1e-3) < 1e-8);
  }

  {  // ranking metrics identity and brute force
    Rng rng(3);
    std::vector<RankedCase> cases(500);
    for (auto& c : cases) {
      std::vector<std::uint32_t> ids(9);
      std::iota(ids.begin(), ids.end(), 0u);
      rng.shuffle(ids);
      c.ranked = ids;
      c.truth = static_cast<std::uint32_t>(rng.below(9));
    }
    bool ok = hr_at_n(cases, 1) == mrr_at_n(cases, 1) &&
              hr_at_n(cases, 1) == ndcg_at_n(cases, 1);
    double brute = 0.0;
    for (const auto& c : cases) {
      for (std::size_t i = 0; i < 5; ++i)
        if (c.ranked[i] == c.truth) {
          brute += 1.0;
          break;
        }
    }
    ok = ok && hr_at_n(cases, 5) == brute / 500.0;
    report("ranking metric oracle", ok);
  }

  {  // k-means blob purity
    Rng rng(17);
    std::vector<std::vector<double>> pts;
    for (int i = 0; i < 25; ++i) pts.push_back({rng.normal(), rng.normal()});
    for (int i = 0; i < 25; ++i) pts.push_back({30.0 + rng.normal(), rng.normal()});
    KmeansResult r = kmeans(pts, 2, 1);
    bool ok = true;
    for (int i = 0; i < 25; ++i)
      if (r.assignment[i] != r.assignment[0]) ok = false;
    for (int i = 25; i < 50; ++i)
      if (r.assignment[i] != r.assignment[25]) ok = false;
    ok = ok && r.assignment[0] != r.assignment[25];
    report("k-means blob purity", ok);
  }

  {  // group attention invariants
    ModelConfig mc;
    mc.dim = 4;
    mc.seed = 23;
    M3RecModel m = init_model(6, 8, 3, {standard_task("download")}, mc);
    std::vector<std::uint32_t> a{1, 4, 6};
    std::vector<std::uint32_t> b{6, 1, 4};
    Matrix beta = group_attention_weights(m, a);
    double sum = 0.0;
    for (std::size_t i = 0; i < beta.size(); ++i) sum += beta[i];
    Tape t;
    Matrix pa = group_embed(take_rows(t.param(m.user_table), a), m.group).value();
    Matrix pb = group_embed(take_rows(t.param(m.user_table), b), m.group).value();
    report("group attention invariants",
           std::abs(sum - 1.0) <= 1e-12 && max_abs_diff(pa, pb) <= 1e-12);
  }

  {  // checkpoint round trip
    namespace fs = std::filesystem;
    const std::string path =
        (fs::temp_directory_path() / "m3rec_check_ckpt.bin").string();
    ModelConfig mc;
    mc.dim = 3;
    mc.seed = 29;
    M3RecModel m = init_model(4, 4, 3, {standard_task("download")}, mc);
    save_checkpoint(m, path);
    M3RecModel r = load_checkpoint(path);
    bool ok = true;
    auto pm = m.parameters();
    auto pr = r.parameters();
    for (std::size_t i = 0; i < pm.size(); ++i)
      if (!(pm[i]->value == pr[i]->value)) ok = false;
    fs::remove(path);
    report("checkpoint round trip", ok);
  }

  if (failures == 0) {
    std::cout << "all checks passed\n";
    return 0;
  }
  std::cout << failures << " check(s) failed\n";
  return 1;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const LookupError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-sequence multi-task sequential recommender"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  std::string gen_config, gen_out;
  std::optional<std::uint64_t> gen_seed;
  std::optional<double> gen_rho;
  gen->add_option("--config", gen_config, "config file (key = value)");
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  gen->add_option("--seed", gen_seed, "override config seed");
  gen->add_option("--rho", gen_rho, "override cross-task correlation");

  // train
  auto* tr = app.add_subcommand("train", "train a model on a dataset");
  std::string tr_data, tr_config, tr_out, tr_history;
  TrainOverrides tr_ov;
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--config", tr_config, "config file (key = value)");
  tr->add_option("--out", tr_out, "checkpoint output path")->required();
  tr->add_option("--history", tr_history, "per-epoch loss table output path");
  tr->add_option("--seed", tr_ov.seed, "override seed");
  tr->add_option("--epochs", tr_ov.epochs, "override epochs");
  tr->add_option("--lr", tr_ov.lr, "override learning rate");
  tr->add_option("--batch", tr_ov.batch, "override batch size");
  tr->add_option("--dim", tr_ov.dim, "override embedding width");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint (leave-last-out)");
  std::string ev_ckpt, ev_data, ev_n = "1,2,5,10", ev_label;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--n", ev_n, "comma-separated cutoff list");
  ev->add_option("--label", ev_label, "setting label for the report");

  // recommend
  auto* rec = app.add_subcommand("recommend", "rank next actions for a user");
  std::string rec_ckpt, rec_data, rec_task = "download";
  std::uint64_t rec_user = 0;
  std::size_t rec_n = 10;
  rec->add_option("--ckpt", rec_ckpt, "checkpoint path")->required();
  rec->add_option("--data", rec_data, "dataset directory")->required();
  rec->add_option("--user", rec_user, "user id")->required();
  rec->add_option("--task", rec_task, "task id (default download)");
  rec->add_option("--n", rec_n, "list length");

  // group
  auto* grp = app.add_subcommand("group", "user-group level operations");
  grp->require_subcommand(1);
  auto* gb = grp->add_subcommand("build", "cluster users and write assignments");
  std::string gb_ckpt, gb_data, gb_out;
  std::size_t gb_k = 0;
  std::optional<std::uint64_t> gb_seed;
  gb->add_option("--ckpt", gb_ckpt, "checkpoint path")->required();
  gb->add_option("--data", gb_data, "dataset directory")->required();
  gb->add_option("--out", gb_out, "group assignment output path")->required();
  gb->add_option("--k", gb_k, "group count (default ceil(sqrt(users/2)))");
  gb->add_option("--seed", gb_seed, "clustering seed (default model seed)");
  auto* gr = grp->add_subcommand("recommend", "rank next items for a group");
  std::string gr_ckpt, gr_data, gr_groups;
  std::uint64_t gr_id = 0;
  std::size_t gr_n = 10;
  gr->add_option("--ckpt", gr_ckpt, "checkpoint path")->required();
  gr->add_option("--data", gr_data, "dataset directory")->required();
  gr->add_option("--groups", gr_groups, "group assignment file")->required();
  gr->add_option("--group-id", gr_id, "group id")->required();
  gr->add_option("--n", gr_n, "list length");

  // check
  app.add_subcommand("check", "run the gradient/oracle self-test suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (gen->parsed()) return guarded([&] { return cmd_gen(gen_config, gen_out, gen_seed, gen_rho); });
  if (tr->parsed())
    return guarded([&] { return cmd_train(tr_data, tr_config, tr_out, tr_history, tr_ov); });
  if (ev->parsed()) return guarded([&] { return cmd_eval(ev_ckpt, ev_data, ev_n, ev_label); });
  if (rec->parsed())
    return guarded([&] { return cmd_recommend(rec_ckpt, rec_data, rec_user, rec_task, rec_n); });
  if (grp->parsed()) {
    if (gb->parsed())
      return guarded([&] { return cmd_group_build(gb_ckpt, gb_data, gb_out, gb_k, gb_seed); });
    return guarded(
        [&] { return cmd_group_recommend(gr_ckpt, gr_data, gr_groups, gr_id, gr_n); });
  }
  return guarded([] { return cmd_check(); });
}
