// Copyright 2026 the m3rec authors
// SPDX-License-Identifier: Apache-2.0
//
// Drives the installed binary end to end. The binary path comes from the
// M3REC_CLI environment variable (set by CTest).
#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "m3rec/model.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

const std::string& cli() {
  static const std::string path = [] {
    const char* env = std::getenv("M3REC_CLI");
    REQUIRE(env != nullptr);
    return std::string(env);
  }();
  return path;
}

RunResult run(const std::string& args) {
  const std::string cmd = cli() + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult r;
  char buf[4096];
  std::size_t got;
  while ((got = fread(buf, 1, sizeof(buf), pipe)) > 0) r.out.append(buf, got);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), {});
}

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() /
          ("m3rec_cli_" + std::to_string(::getpid()) + "_" +
           std::to_string(counter()++));
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

void write_config(const std::string& path, const std::string& extra = "") {
  std::ofstream os(path);
  os << "users = 60\nitems = 20\ncategories = 5\nfriend_clusters = 3\n"
     << "rho = 0.8\nseed = 11\nmain_len_min = 4\nmain_len_max = 8\n"
     << "dim = 8\nepochs = 2\nlearning_rate = 0.002\nbatch_size = 16\n"
     << extra;
}

}  // namespace

TEST_CASE("gen writes a dataset and repeats byte-identically per seed") {
  Workspace ws;
  write_config(ws / "world.cfg");
  RunResult r1 = run("gen --config " + (ws / "world.cfg") + " --out " + (ws / "d1"));
  CHECK(r1.code == 0);
  CHECK(fs::exists(ws.dir / "d1" / "manifest"));
  CHECK(fs::exists(ws.dir / "d1" / "actions.tsv"));

  RunResult r2 = run("gen --config " + (ws / "world.cfg") + " --out " + (ws / "d2"));
  REQUIRE(r2.code == 0);
  for (const char* f : {"manifest", "actions.tsv", "item_categories.tsv"})
    CHECK(read_file(ws.dir / "d1" / f) == read_file(ws.dir / "d2" / f));

  // a different seed changes the bytes
  RunResult r3 = run("gen --config " + (ws / "world.cfg") + " --seed 12 --out " +
                     (ws / "d3"));
  REQUIRE(r3.code == 0);
  CHECK(read_file(ws.dir / "d1" / "actions.tsv") !=
        read_file(ws.dir / "d3" / "actions.tsv"));
}

TEST_CASE("gen rejects an out-of-range correlation with exit 2") {
  Workspace ws;
  write_config(ws / "world.cfg");
  RunResult r = run("gen --config " + (ws / "world.cfg") + " --rho 1.5 --out " +
                    (ws / "d"));
  CHECK(r.code == 2);
  CHECK(!fs::exists(ws.dir / "d" / "manifest"));
}

TEST_CASE("train produces deterministic checkpoints and a history file") {
  Workspace ws;
  write_config(ws / "world.cfg");
  REQUIRE(run("gen --config " + (ws / "world.cfg") + " --out " + (ws / "d")).code == 0);
  const std::string base = " --data " + (ws / "d") + " --config " + (ws / "world.cfg");
  RunResult t1 = run("train" + base + " --out " + (ws / "a.ckpt") + " --history " +
                     (ws / "hist.tsv"));
  CHECK(t1.code == 0);
  RunResult t2 = run("train" + base + " --out " + (ws / "b.ckpt"));
  CHECK(t2.code == 0);
  CHECK(read_file(ws.dir / "a.ckpt") == read_file(ws.dir / "b.ckpt"));

  // epoch rows for each task plus the joint line
  std::istringstream hist(read_file(ws.dir / "hist.tsv"));
  std::string line;
  std::getline(hist, line);
  CHECK(line == "epoch\tterm\tloss_sum");
  std::size_t joints = 0, rows = 0;
  while (std::getline(hist, line)) {
    ++rows;
    if (line.find("\tjoint\t") != std::string::npos) ++joints;
  }
  CHECK(joints == 2);       // one per epoch
  CHECK(rows == 2 * 5);     // 4 tasks + joint, twice

  RunResult missing = run("train --data " + (ws / "nowhere") + " --out " + (ws / "x"));
  CHECK(missing.code == 2);
}

TEST_CASE("eval emits a parseable metric table, byte-identical across runs") {
  Workspace ws;
  write_config(ws / "world.cfg");
  REQUIRE(run("gen --config " + (ws / "world.cfg") + " --out " + (ws / "d")).code == 0);
  REQUIRE(run("train --data " + (ws / "d") + " --config " + (ws / "world.cfg") +
              " --out " + (ws / "m.ckpt"))
              .code == 0);
  RunResult e1 = run("eval --ckpt " + (ws / "m.ckpt") + " --data " + (ws / "d") +
                     " --n 1,2,5,10");
  REQUIRE(e1.code == 0);
  std::istringstream is(e1.out);
  std::string header;
  std::getline(is, header);
  CHECK(header == "setting\ttask\tmetric\tn\tvalue");
  std::size_t rows = 0;
  std::string line;
  while (std::getline(is, line)) {
    ++rows;
    std::istringstream ls(line);
    std::string setting, task, metric, n, value;
    std::getline(ls, setting, '\t');
    std::getline(ls, task, '\t');
    std::getline(ls, metric, '\t');
    std::getline(ls, n, '\t');
    std::getline(ls, value, '\t');
    CHECK(setting == "m");
    CHECK((metric == "HR" || metric == "MRR" || metric == "NDCG"));
    const double v = std::stod(value);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(rows == 4 * 3 * 4);  // tasks x metrics x cutoffs

  RunResult e2 = run("eval --ckpt " + (ws / "m.ckpt") + " --data " + (ws / "d") +
                     " --n 1,2,5,10");
  CHECK(e1.out == e2.out);
}

TEST_CASE("an untrained model evaluates near the random baseline") {
  Workspace ws;
  std::ofstream(ws / "world.cfg") << "users = 300\nitems = 20\ncategories = 4\n"
                                  << "friend_clusters = 3\nrho = 0.5\nseed = 3\n"
                                  << "tasks = download\nmain_len_min = 4\n"
                                  << "main_len_max = 8\ndim = 8\nepochs = 0\n";
  REQUIRE(run("gen --config " + (ws / "world.cfg") + " --out " + (ws / "d")).code == 0);
  REQUIRE(run("train --data " + (ws / "d") + " --config " + (ws / "world.cfg") +
              " --out " + (ws / "m.ckpt"))
              .code == 0);
  RunResult e = run("eval --ckpt " + (ws / "m.ckpt") + " --data " + (ws / "d") +
                    " --n 1 --label raw");
  REQUIRE(e.code == 0);
  std::istringstream is(e.out);
  std::string line;
  std::getline(is, line);  // header
  double hr1 = -1.0;
  while (std::getline(is, line)) {
    if (line.find("\tHR\t1\t") != std::string::npos)
      hr1 = std::stod(line.substr(line.rfind('\t') + 1));
  }
  REQUIRE(hr1 >= 0.0);
  CHECK(hr1 < 1.0 / 20.0 + 0.06);  // near the 1/|V| floor
}

TEST_CASE("recommend prints exactly n lines and flags unknown users") {
  Workspace ws;
  write_config(ws / "world.cfg");
  REQUIRE(run("gen --config " + (ws / "world.cfg") + " --out " + (ws / "d")).code == 0);
  REQUIRE(run("train --data " + (ws / "d") + " --config " + (ws / "world.cfg") +
              " --out " + (ws / "m.ckpt"))
              .code == 0);
  RunResult one = run("recommend --ckpt " + (ws / "m.ckpt") + " --data " + (ws / "d") +
                      " --user 5 --task download --n 1");
  CHECK(one.code == 0);
  CHECK(std::count(one.out.begin(), one.out.end(), '\n') == 1);

  RunResult unknown = run("recommend --ckpt " + (ws / "m.ckpt") + " --data " +
                          (ws / "d") + " --user 9999 --task download --n 1");
  CHECK(unknown.code == 3);
}

TEST_CASE("a single-member group with zeroed fusion matches recommend end to end") {
  Workspace ws;
  write_config(ws / "world.cfg");
  REQUIRE(run("gen --config " + (ws / "world.cfg") + " --out " + (ws / "d")).code == 0);
  REQUIRE(run("train --data " + (ws / "d") + " --config " + (ws / "world.cfg") +
              " --out " + (ws / "m.ckpt"))
              .code == 0);

  // zero the fusion parameters so the group path degenerates to the individual one
  m3rec::M3RecModel m = m3rec::load_checkpoint(ws / "m.ckpt");
  for (m3rec::Parameter* p :
       {&m.group.agg_proj, &m.group.member_w, &m.group.member_bias, &m.group.score_w,
        &m.group.score_bias})
    p->value = m3rec::Matrix(p->value.rows(), p->value.cols());
  m3rec::save_checkpoint(m, ws / "zeroed.ckpt");

  std::ofstream(ws / "groups.tsv") << "0\t7\n";  // group 0 = {user 7}
  RunResult grp = run("group recommend --ckpt " + (ws / "zeroed.ckpt") + " --data " +
                      (ws / "d") + " --groups " + (ws / "groups.tsv") +
                      " --group-id 0 --n 5");
  REQUIRE(grp.code == 0);
  RunResult ind = run("recommend --ckpt " + (ws / "zeroed.ckpt") + " --data " +
                      (ws / "d") + " --user 7 --task download --n 5");
  REQUIRE(ind.code == 0);
  CHECK(grp.out == ind.out);

  RunResult nogroup = run("group recommend --ckpt " + (ws / "zeroed.ckpt") +
                          " --data " + (ws / "d") + " --groups " +
                          (ws / "groups.tsv") + " --group-id 4 --n 5");
  CHECK(nogroup.code == 3);
}

TEST_CASE("group build writes a reloadable stable-sorted assignment file") {
  Workspace ws;
  write_config(ws / "world.cfg");
  REQUIRE(run("gen --config " + (ws / "world.cfg") + " --out " + (ws / "d")).code == 0);
  REQUIRE(run("train --data " + (ws / "d") + " --config " + (ws / "world.cfg") +
              " --out " + (ws / "m.ckpt"))
              .code == 0);
  RunResult b1 = run("group build --ckpt " + (ws / "m.ckpt") + " --data " + (ws / "d") +
                     " --out " + (ws / "g1.tsv") + " --k 4");
  CHECK(b1.code == 0);
  RunResult b2 = run("group build --ckpt " + (ws / "m.ckpt") + " --data " + (ws / "d") +
                     " --out " + (ws / "g2.tsv") + " --k 4");
  REQUIRE(b2.code == 0);
  const std::string g1 = read_file(ws.dir / "g1.tsv");
  CHECK(g1 == read_file(ws.dir / "g2.tsv"));
  // every user appears exactly once
  std::istringstream is(g1);
  std::string line;
  std::set<std::string> users;
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    users.insert(line.substr(line.find('\t') + 1));
  }
  CHECK(rows == 60);
  CHECK(users.size() == 60);
}

TEST_CASE("check reports ok for every self-test") {
  RunResult r = run("check");
  CHECK(r.code == 0);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(r.out.find("all checks passed") != std::string::npos);
}
