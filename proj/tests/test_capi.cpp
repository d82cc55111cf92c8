// Exercises the shared library through its C header only.

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <unistd.h>

#include <doctest.h>

#include "stbs/stbs.h"

namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path dir;
  Scratch() {
    static int counter = 0;
    dir = fs::temp_directory_path() /
          ("stbs_capi_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  std::string operator/(const char* name) const { return (dir / name).string(); }
};

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void simulate_into(const Scratch& s, std::uint64_t seed) {
  stbs_simulate_options o;
  stbs_simulate_options_default(&o);
  o.docs = 80;
  o.terms = 40;
  o.topics = 2;
  o.authors = 8;
  o.seed = seed;
  REQUIRE(stbs_simulate(&o, (s / "").c_str()) == STBS_OK);
}

stbs_config* small_config() {
  stbs_config* c = nullptr;
  REQUIRE(stbs_config_new(&c) == STBS_OK);
  REQUIRE(stbs_config_set(c, "num_topics", "2") == STBS_OK);
  REQUIRE(stbs_config_set(c, "batch_size", "32") == STBS_OK);
  REQUIRE(stbs_config_set(c, "hpf_iters", "20") == STBS_OK);
  REQUIRE(stbs_config_set(c, "seed", "5") == STBS_OK);
  return c;
}

void on_epoch(const stbs_progress* p, void* user) {
  auto* seen = static_cast<std::vector<double>*>(user);
  seen->push_back(p->elbo);
}

}  // namespace

TEST_CASE("status names and version") {
  CHECK(std::strlen(stbs_version()) > 0);
  CHECK(std::string(stbs_status_name(STBS_OK)) == "ok");
  CHECK(std::string(stbs_status_name(STBS_ERR_PARSE)) == "parse error");
}

TEST_CASE("errors are reported through status codes") {
  stbs_corpus* c = nullptr;
  CHECK(stbs_corpus_load("/nonexistent/counts.csv", "/nonexistent/authors.csv", nullptr, &c) ==
        STBS_ERR_IO);
  CHECK(c == nullptr);
  CHECK(std::string(stbs_last_error()).find("counts.csv") != std::string::npos);

  CHECK(stbs_corpus_load(nullptr, nullptr, nullptr, &c) == STBS_ERR_INVALID_ARGUMENT);

  stbs_config* cfg = nullptr;
  REQUIRE(stbs_config_new(&cfg) == STBS_OK);
  CHECK(stbs_config_set(cfg, "no_such_key", "1") == STBS_ERR_CONFIG);
  CHECK(std::string(stbs_last_error()).find("no_such_key") != std::string::npos);
  CHECK(stbs_config_set(cfg, "num_topics", "many") != STBS_OK);
  stbs_config_free(cfg);

  Scratch s;
  std::ofstream(s / "bad.csv") << "doc_id,term_id,count\n0,1,x\n";
  std::ofstream(s / "authors.csv") << "doc_id,author_id\n0,0\n";
  CHECK(stbs_corpus_load((s / "bad.csv").c_str(), (s / "authors.csv").c_str(), nullptr, &c) ==
        STBS_ERR_PARSE);

  stbs_model* m = nullptr;
  std::ofstream(s / "state.json") << "{\"schema\": \"something_else\"}";
  CHECK(stbs_model_load((s / "state.json").c_str(), &m) == STBS_ERR_SCHEMA);
  CHECK(m == nullptr);

  stbs_corpus_free(nullptr);
  stbs_model_free(nullptr);
  stbs_config_free(nullptr);
}

TEST_CASE("simulate, fit, save, reload, summarize") {
  Scratch s;
  simulate_into(s, 3);
  for (const char* f : {"counts.csv", "authors.csv", "covariates.csv", "truth.json"}) {
    CHECK(fs::exists(s.dir / f));
  }

  stbs_corpus* corpus = nullptr;
  REQUIRE(stbs_corpus_load((s / "counts.csv").c_str(), (s / "authors.csv").c_str(), nullptr,
                           &corpus) == STBS_OK);
  size_t docs = 0, terms = 0, authors = 0, nnz = 0;
  REQUIRE(stbs_corpus_dims(corpus, &docs, &terms, &authors, &nnz) == STBS_OK);
  CHECK(docs > 0);
  CHECK(authors == 8);
  CHECK(nnz > docs);

  stbs_config* cfg = small_config();
  char* json = nullptr;
  REQUIRE(stbs_config_to_json(cfg, &json) == STBS_OK);
  CHECK(std::string(json).find("\"num_topics\": 2") != std::string::npos);
  stbs_string_free(json);

  int64_t* ids = nullptr;
  double* pos = nullptr;
  size_t n = 0;
  REQUIRE(stbs_anchors_from_covariate((s / "covariates.csv").c_str(), "group", "a=-1,b=1", &ids,
                                      &pos, &n) == STBS_OK);
  CHECK(n == 8);
  CHECK(pos[0] == -1.0);
  CHECK(pos[1] == 1.0);

  stbs_model* model = nullptr;
  REQUIRE(stbs_model_init(corpus, (s / "covariates.csv").c_str(), "~ group + noise", cfg, ids, pos,
                          n, nullptr, &model) == STBS_OK);
  stbs_anchors_free(ids, pos);

  size_t d = 0, v = 0, k = 0, a = 0, l = 0;
  REQUIRE(stbs_model_dims(model, &d, &v, &k, &a, &l) == STBS_OK);
  CHECK(k == 2);
  CHECK(l == 3);
  CHECK(d == docs);

  std::vector<double> seen;
  REQUIRE(stbs_model_fit(model, corpus, 3, nullptr, on_epoch, &seen) == STBS_OK);
  CHECK(seen.size() == 3);
  uint64_t step = 0;
  REQUIRE(stbs_model_step(model, &step) == STBS_OK);
  CHECK(step == 3 * ((docs + 31) / 32));

  size_t len = 0;
  REQUIRE(stbs_model_trace(model, nullptr, 0, &len) == STBS_OK);
  CHECK(len == step);
  std::vector<double> trace(len);
  REQUIRE(stbs_model_trace(model, trace.data(), trace.size(), &len) == STBS_OK);
  CHECK(trace.back() == seen.back());

  size_t rows = 0, cols = 0;
  std::vector<double> positions(authors * 2);
  REQUIRE(stbs_model_positions(model, positions.data(), positions.size(), &rows, &cols) ==
          STBS_OK);
  CHECK(rows == authors);
  CHECK(cols == 2);

  REQUIRE(stbs_model_save(model, (s / "state.json").c_str()) == STBS_OK);
  stbs_model* back = nullptr;
  REQUIRE(stbs_model_load((s / "state.json").c_str(), &back) == STBS_OK);
  REQUIRE(stbs_model_save(back, (s / "state2.json").c_str()) == STBS_OK);
  CHECK(slurp(s / "state.json") == slurp(s / "state2.json"));

  // Resume continues the step counter.
  REQUIRE(stbs_model_fit(back, corpus, 1, (s / "ckpt.json").c_str(), nullptr, nullptr) == STBS_OK);
  uint64_t step2 = 0;
  REQUIRE(stbs_model_step(back, &step2) == STBS_OK);
  CHECK(step2 == step + (docs + 31) / 32);

  REQUIRE(stbs_model_write_trace(back, (s / "trace.csv").c_str()) == STBS_OK);
  CHECK(slurp(s / "trace.csv").rfind("step,elbo", 0) == 0);

  stbs_summary_options so;
  stbs_summary_options_default(&so);
  so.what = "polarity";
  REQUIRE(stbs_summarize(back, corpus, &so, (s / "report").c_str()) == STBS_OK);
  const auto pol = slurp(s / "report/polarity.csv");
  CHECK(std::count(pol.begin(), pol.end(), '\n') == 3);
  so.what = "pictures";
  CHECK(stbs_summarize(back, corpus, &so, (s / "report").c_str()) == STBS_ERR_INVALID_ARGUMENT);

  // A corpus of the wrong shape is rejected.
  Scratch other;
  std::ofstream(other / "c.csv") << "doc_id,term_id,count\n0,0,1\n1,1,2\n";
  std::ofstream(other / "a.csv") << "doc_id,author_id\n0,0\n1,1\n";
  stbs_corpus* tiny = nullptr;
  REQUIRE(stbs_corpus_load((other / "c.csv").c_str(), (other / "a.csv").c_str(), nullptr, &tiny) ==
          STBS_OK);
  CHECK(stbs_model_fit(back, tiny, 1, nullptr, nullptr, nullptr) == STBS_ERR_INVALID_ARGUMENT);
  CHECK(stbs_model_set_threads(back, 0) == STBS_ERR_INVALID_ARGUMENT);

  stbs_corpus_free(tiny);
  stbs_model_free(back);
  stbs_model_free(model);
  stbs_config_free(cfg);
  stbs_corpus_free(corpus);
}

TEST_CASE("simulation is deterministic") {
  Scratch a, b;
  simulate_into(a, 11);
  simulate_into(b, 11);
  for (const char* f : {"counts.csv", "authors.csv", "covariates.csv", "truth.json"}) {
    CHECK(slurp(a / f) == slurp(b / f));
  }
}
