// Copyright 2026 the m3rec authors
// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "m3rec/grouping.hpp"
#include "support/oracles.hpp"

using namespace m3rec;

namespace {

std::vector<TaskSpec> world_tasks() {
  return {standard_task("download"), standard_task("category"),
          standard_task("friend")};
}

Dataset tiny_world(std::uint64_t seed = 1) {
  WorldConfig wc;
  wc.users = 10;
  wc.items = 8;
  wc.categories = 4;
  wc.friend_clusters = 2;
  wc.main_len = {4, 6};
  wc.friend_len = {2, 4};
  wc.task_ids = {"download", "category", "friend"};
  wc.rho = 0.7;
  wc.seed = seed;
  return generate(wc);
}

M3RecModel tiny_model(std::uint64_t seed = 1) {
  ModelConfig mc;
  mc.dim = 4;
  mc.seed = seed;
  return init_model(8, 10, 4, world_tasks(), mc);
}

void zero_group_params(M3RecModel& m) {
  for (Parameter* p : {&m.group.agg_proj, &m.group.member_w, &m.group.member_bias,
                       &m.group.score_w, &m.group.score_bias})
    p->value = Matrix(p->value.rows(), p->value.cols());
}

}  // namespace

TEST_CASE("kmeans separates two 1-d pairs exactly") {
  std::vector<std::vector<double>> pts{{0.0}, {0.1}, {10.0}, {10.1}};
  KmeansResult r = kmeans(pts, 2, 5);
  CHECK(r.assignment[0] == r.assignment[1]);
  CHECK(r.assignment[2] == r.assignment[3]);
  CHECK(r.assignment[0] != r.assignment[2]);
  std::vector<double> cs{r.centroids[0][0], r.centroids[1][0]};
  std::sort(cs.begin(), cs.end());
  CHECK(cs[0] == Catch::Approx(0.05));
  CHECK(cs[1] == Catch::Approx(10.05));
}

TEST_CASE("kmeans degenerate settings") {
  std::vector<std::vector<double>> pts{{1.0, 0.0}, {2.0, 1.0}, {6.0, -1.0}};
  KmeansResult one = kmeans(pts, 1, 7);
  CHECK(one.centroids[0][0] == Catch::Approx(3.0));
  CHECK(one.centroids[0][1] == Catch::Approx(0.0));

  KmeansResult all = kmeans(pts, 3, 7);
  CHECK(all.objective == Catch::Approx(0.0).margin(1e-24));
  std::set<std::uint32_t> distinct(all.assignment.begin(), all.assignment.end());
  CHECK(distinct.size() == 3);

  CHECK_THROWS_AS(kmeans(pts, 4, 7), ConfigError);
  CHECK_THROWS_AS(kmeans({}, 1, 7), ConfigError);
  CHECK_THROWS_AS(kmeans(pts, 2, 7, 0), ConfigError);
}

TEST_CASE("kmeans objective is non-increasing across Lloyd iterations") {
  Rng rng(71);
  std::vector<std::vector<double>> pts(60, std::vector<double>(3));
  for (auto& p : pts)
    for (double& x : p) x = rng.uniform(-5, 5);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t iters = 1; iters <= 12; ++iters) {
    KmeansResult r = kmeans(pts, 5, 13, iters);
    CHECK(r.objective <= prev + 1e-9);
    prev = r.objective;
  }
}

TEST_CASE("kmeans reaches full purity on widely separated blobs") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed * 100 + 7);
    std::vector<std::vector<double>> pts;
    std::vector<int> truth;
    for (int i = 0; i < 30; ++i) {  // sigma = 1, centers 20 apart (10 sigma each side)
      pts.push_back({rng.normal(), rng.normal()});
      truth.push_back(0);
    }
    for (int i = 0; i < 30; ++i) {
      pts.push_back({20.0 + rng.normal(), rng.normal()});
      truth.push_back(1);
    }
    KmeansResult r = kmeans(pts, 2, seed);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < pts.size(); ++i)
      if ((r.assignment[i] == r.assignment[0]) == (truth[i] == truth[0])) ++agree;
    CHECK(agree == pts.size());
  }
}

TEST_CASE("user features are standardized per coordinate") {
  Dataset ds = tiny_world();
  M3RecModel m = tiny_model();
  auto feats = build_user_features(m, ds);
  REQUIRE(feats.size() == ds.user_count);
  const std::size_t dim = m.dim + ds.tasks.size();
  for (const auto& f : feats) REQUIRE(f.vec.size() == dim);
  for (std::size_t k = 0; k < dim; ++k) {
    double mean = 0.0, var = 0.0;
    for (const auto& f : feats) mean += f.vec[k];
    mean /= feats.size();
    for (const auto& f : feats) var += (f.vec[k] - mean) * (f.vec[k] - mean);
    var /= feats.size();
    CHECK(std::abs(mean) < 1e-10);
    // either standardized to unit variance or a constant column passed as zeros
    CHECK((std::abs(var - 1.0) < 1e-10 || var == 0.0));
  }
}

TEST_CASE("attention weights form a shift-invariant probability vector") {
  M3RecModel m = tiny_model(3);
  std::vector<std::uint32_t> members{0, 3, 5, 7};
  Matrix beta = group_attention_weights(m, members);
  REQUIRE(beta.rows() == 4);
  double sum = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(beta[i] > 0.0);
    sum += beta[i];
  }
  CHECK(std::abs(sum - 1.0) <= 1e-12);

  // adding a constant to every pre-softmax score leaves beta unchanged
  M3RecModel shifted = tiny_model(3);
  shifted.group.score_bias.value[0] += 123.0;
  Matrix beta2 = group_attention_weights(shifted, members);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(beta[i] - beta2[i]) <= 1e-12);
}

TEST_CASE("group embedding of a single member is relu of its projection") {
  M3RecModel m = tiny_model(5);
  Tape t;
  std::vector<std::uint32_t> one{4};
  Var x = take_rows(t.param(m.user_table), one);
  Matrix pg = group_embed(x, m.group).value();
  for (std::size_t k = 0; k < m.dim; ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.dim; ++j)
      s += m.group.agg_proj.value(k, j) * m.user_table.value(4, j);
    CHECK(pg[k] == Catch::Approx(std::max(0.0, s)).margin(1e-12));
  }
}

TEST_CASE("identical members collapse to the single-member embedding") {
  M3RecModel m = tiny_model(7);
  Tape t;
  std::vector<std::uint32_t> one{2};
  std::vector<std::uint32_t> many{2, 2, 2, 2, 2};
  Matrix a = group_embed(take_rows(t.param(m.user_table), one), m.group).value();
  Matrix b = group_embed(take_rows(t.param(m.user_table), many), m.group).value();
  CHECK(max_abs_diff(a, b) <= 1e-12);
}

TEST_CASE("group embedding is invariant under member permutation") {
  M3RecModel m = tiny_model(9);
  Tape t;
  std::vector<std::uint32_t> a{1, 4, 7, 9};
  std::vector<std::uint32_t> b{9, 1, 7, 4};
  Matrix pa = group_embed(take_rows(t.param(m.user_table), a), m.group).value();
  Matrix pb = group_embed(take_rows(t.param(m.user_table), b), m.group).value();
  CHECK(max_abs_diff(pa, pb) <= 1e-12);

  CHECK_THROWS_AS(group_embed(t.constant(Matrix(0, 4)), m.group), ConfigError);
}

TEST_CASE("merging keeps single member sequences and concatenates disjoint times") {
  ActionSequence a{0, "download", {{1, 1}, {2, 3}, {3, 5}}};
  ActionSequence b{1, "download", {{7, 10}, {8, 12}}};
  std::vector<const ActionSequence*> one{&a};
  ActionSequence m1 = merge_group_sequence(one);
  REQUIRE(m1.size() == a.size());
  for (std::size_t j = 0; j < a.size(); ++j) CHECK(m1.actions[j].id == a.actions[j].id);

  std::vector<const ActionSequence*> two{&a, &b};
  ActionSequence m2 = merge_group_sequence(two);
  REQUIRE(m2.size() == 5);
  CHECK(m2.actions[3].id == 7);
  CHECK(m2.actions[4].id == 8);

  ActionSequence empty1{2, "download", {}};
  std::vector<const ActionSequence*> none{&empty1};
  CHECK_THROWS_AS(merge_group_sequence(none), ConfigError);
}

TEST_CASE("interleaved merges match a stable sort oracle") {
  Rng rng(81);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<ActionSequence> seqs(3);
    for (std::uint32_t u = 0; u < 3; ++u) {
      seqs[u].user = u;
      seqs[u].task_id = "download";
      std::int64_t t = rng.below(4);
      const std::size_t len = 1 + rng.below(5);
      for (std::size_t j = 0; j < len; ++j) {
        t += 1 + rng.below(3);
        seqs[u].actions.push_back({static_cast<std::uint32_t>(rng.below(9)), t});
      }
    }
    std::vector<const ActionSequence*> ptrs{&seqs[0], &seqs[1], &seqs[2]};
    ActionSequence merged = merge_group_sequence(ptrs);

    // oracle: stable sort tagged triples by (time, user, position)
    struct Row {
      std::int64_t t;
      std::uint32_t user;
      std::size_t pos;
      std::uint32_t id;
    };
    std::vector<Row> rows;
    for (const auto& s : seqs)
      for (std::size_t j = 0; j < s.size(); ++j)
        rows.push_back({s.actions[j].time, s.user, j, s.actions[j].id});
    std::stable_sort(rows.begin(), rows.end(), [](const Row& x, const Row& y) {
      return std::tie(x.t, x.user, x.pos) < std::tie(y.t, y.user, y.pos);
    });
    REQUIRE(merged.size() == rows.size());
    for (std::size_t j = 0; j < rows.size(); ++j) {
      CHECK(merged.actions[j].id == rows[j].id);
      CHECK(merged.actions[j].time == rows[j].t);
    }
  }
}

TEST_CASE("zeroed fusion makes a single-member group match individual ranking") {
  Dataset ds = tiny_world(13);
  M3RecModel m = tiny_model(13);
  zero_group_params(m);
  const std::size_t main_ti = ds.task_index("download");
  for (std::uint32_t u = 0; u < ds.user_count; ++u) {
    std::vector<std::uint32_t> members{u};
    auto group_top = group_recommend(m, ds, members, 8);
    auto ids = ds.sequences[main_ti][u].ids();
    auto indiv_top = recommend(m, "download", ids, 8);
    REQUIRE(group_top.size() == indiv_top.size());
    for (std::size_t j = 0; j < group_top.size(); ++j) {
      CHECK(group_top[j].first == indiv_top[j].first);
      CHECK(group_top[j].second == Catch::Approx(indiv_top[j].second).margin(1e-12));
    }
  }
}

TEST_CASE("duplicated members do not change the group ranking") {
  Dataset ds = tiny_world(15);
  M3RecModel m = tiny_model(15);
  std::vector<std::uint32_t> one{3};
  std::vector<std::uint32_t> many{3, 3, 3};
  auto a = group_recommend(m, ds, one, 8);
  auto b = group_recommend(m, ds, many, 8);
  // merged sequence repeats actions but the graph collapses revisits; the
  // attention collapse makes p_g identical, so rankings agree
  REQUIRE(a.size() == b.size());
  for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j].first == b[j].first);
}

TEST_CASE("group scoring ties break by ascending id") {
  Dataset ds = tiny_world(17);
  M3RecModel m = tiny_model(17);
  zero_group_params(m);
  for (std::uint32_t r = 0; r < m.item_count; ++r)
    for (std::size_t k = 0; k < m.dim; ++k) m.item_table.value(r, k) = 0.3;
  std::vector<std::uint32_t> members{0, 1};
  auto top = group_recommend(m, ds, members, 5);
  REQUIRE(top.size() == 5);
  for (std::size_t j = 0; j < 5; ++j) CHECK(top[j].first == j);
}

TEST_CASE("the aggregation path passes the gradient oracle") {
  Dataset ds = tiny_world(19);
  M3RecModel m = tiny_model(19);
  std::vector<GroupExample> batch{
      {{0, 2, 5}, {1, 3, 2, 3}, 6},
      {{1, 4}, {0, 2}, 3},
  };
  auto params = m.parameters();
  auto eval = [&](bool with_grad) {
    Tape t;
    Var loss = group_task_loss(t, m, batch);
    if (with_grad) {
      m.zero_grads();
      t.backward(loss);
    }
    return loss.value()[0];
  };
  GradCheckReport rep;
  const double err =
      finite_diff_check(std::span<Parameter* const>(params), eval, 1e-4, &rep);
  INFO("worst " << rep.worst_param << " analytic " << rep.analytic << " numeric "
                << rep.numeric);
  CHECK(err < 1e-4);
  // the group parameters actually receive gradient through this path
  eval(true);
  CHECK(m.group.member_w.grad.max_abs() > 0.0);
  CHECK(m.group.agg_proj.grad.max_abs() > 0.0);
}

TEST_CASE("group assignment files round trip stable-sorted") {
  namespace fs = std::filesystem;
  const auto path = fs::temp_directory_path() / "m3rec_groups_test.tsv";
  std::vector<UserGroup> groups{{2, {5, 1}}, {0, {3}}, {1, {0, 2, 4}}};
  save_groups(groups, path.string());

  std::ifstream is(path);
  std::string all((std::istreambuf_iterator<char>(is)), {});
  CHECK(all == "0\t3\n1\t0\n1\t2\n1\t4\n2\t1\n2\t5\n");

  auto loaded = load_groups(path.string());
  REQUIRE(loaded.size() == 3);
  CHECK(loaded[0].group_id == 0);
  CHECK(loaded[1].members == std::vector<std::uint32_t>{0, 2, 4});
  CHECK(loaded[2].members == std::vector<std::uint32_t>{1, 5});
  fs::remove(path);
}

TEST_CASE("build_groups covers every user exactly once") {
  Dataset ds = tiny_world(21);
  M3RecModel m = tiny_model(21);
  auto groups = build_groups(m, ds, 3, 21);
  std::vector<int> seen(ds.user_count, 0);
  for (const auto& g : groups) {
    CHECK(!g.members.empty());
    for (std::uint32_t u : g.members) seen[u]++;
  }
  for (int c : seen) CHECK(c == 1);
}
