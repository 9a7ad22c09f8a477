#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "onelatent/curriculum/curriculum.hpp"
#include "onelatent/eval/eval.hpp"
#include "onelatent/util/error.hpp"
#include "oracles.hpp"
#include "paper_tables.hpp"

using namespace onelatent;
using namespace onelatent::eval;

namespace {

// printf rounding, independent of round_to.
double printed(double x, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, x);
  return std::stod(buf);
}

model::ModelState tiny_state(const std::vector<taskgen::Sample>& corpus) {
  std::vector<std::string> texts;
  for (const auto& s : corpus) {
    texts.push_back(s.question);
    texts.push_back(s.cot);
    texts.push_back(s.answer);
  }
  auto tok = model::Tokenizer::build(texts);
  model::ModelConfig c;
  c.vocab_size = static_cast<std::uint32_t>(tok.size());
  c.d = 16;
  c.layers = 1;
  c.heads = 2;
  c.max_seq_len = 160;
  c.ff_mult = 2;
  c.rng_seed = 3;
  model::ModelState st{tok, model::MicroTransformer(c)};
  curriculum::init_special_tokens(st);
  return st;
}

}  // namespace

TEST_CASE("OTC reproduces every published method-comparison cell") {
  for (const auto& c : paper::method_comparison()) {
    const double v = otc(c.acc, c.out);
    CHECK(v == doctest::Approx(oracle::otc(c.acc, c.out)).epsilon(1e-15));
    INFO(c.method << " " << c.dataset);
    CHECK(std::abs(round_to(v, c.decimals) - c.otc) <= 0.01 + 1e-9);
    CHECK(std::abs(printed(v, c.decimals) - c.otc) <= 0.01 + 1e-9);
  }
}

TEST_CASE("OTC reproduces the stage ablation cells") {
  CHECK(round_to(otc(24.79, 5.09), 2) == doctest::Approx(4.87));
  CHECK(round_to(otc(91.0, 9.47), 2) == doctest::Approx(9.61));
  for (const auto& c : paper::stage_ablation()) {
    INFO(c.method << " " << c.dataset);
    CHECK(std::abs(round_to(otc(c.acc, c.out), c.decimals) - c.otc) <= 0.01 + 1e-9);
  }
}

TEST_CASE("compression ratios of the enhanced sets") {
  for (const auto& c : paper::enhanced_compression()) {
    const auto b = compression_ratio(c.co, c.no);
    CHECK(std::abs(b.cr - c.cr) <= 0.1);
    CHECK(b.cr == doctest::Approx(c.cr));
  }
  CHECK_THROWS_AS(compression_ratio(10, 0), ContractViolation);
}

TEST_CASE("OTC is zero when either side is zero") {
  CHECK(otc(0.0, 5.0) == 0.0);
  CHECK(otc(50.0, 0.0) == 0.0);
}

TEST_CASE("round_to rounds half away from zero") {
  CHECK(round_to(2.345, 2) == doctest::Approx(2.35));
  CHECK(round_to(-2.345, 2) == doctest::Approx(-2.35));
  CHECK(round_to(87.36, 1) == doctest::Approx(87.4));
}

TEST_CASE("hash-marker extraction") {
  const AnswerNormalizer n{AnswerFamily::hash_marker, "####"};
  CHECK(extract_answer("so 3+4=7 #### 7", n) == "7");
  CHECK(extract_answer("#### 1 #### 1,234", n) == "1234");
  CHECK(extract_answer("#### 007", n) == "7");
  CHECK(extract_answer("#### 2.50", n) == "2.5");
  CHECK(extract_answer("#### -0", n) == "0");
  CHECK(extract_answer("no marker 5", n) == "");
  CHECK(extract_answer("### 5", {AnswerFamily::hash_marker, "###"}) == "5");
}

TEST_CASE("final-sentence extraction") {
  const AnswerNormalizer n{AnswerFamily::final_sentence, ""};
  CHECK(extract_answer("Rex is a wumpus. True.", n) == "true");
  CHECK(extract_answer("  False  ", n) == "false");
  CHECK(extract_answer("A b.  So   IT   is  ", n) == "so it is");
  CHECK(normalizer_for(taskgen::TaskKind::arith).family == AnswerFamily::hash_marker);
  CHECK(normalizer_for(taskgen::TaskKind::chain).family == AnswerFamily::final_sentence);
}

TEST_CASE("macro average reports both OTC readings") {
  std::vector<double> acc, out, otcs;
  for (const auto& c : paper::method_comparison()) {
    if (c.method == "OneLatent" && c.dataset != "AVG") {
      acc.push_back(c.acc);
      out.push_back(c.out);
      otcs.push_back(c.otc);
    }
  }
  const auto m = macro_average(acc, out, otcs);
  CHECK(std::abs(m.accuracy - 52.7) < 0.05);
  CHECK(std::abs(m.avg_out - 6.78) < 0.005);
  CHECK(std::abs(round_to(m.otc_of_means, 2) - 7.77) <= 0.01);
  CHECK(m.mean_of_otcs == doctest::Approx((4.87 + 0.90 + 7.30 + 10.1 + 11.1) / 5));
  CHECK_THROWS_AS(macro_average({}, {}, {}), ContractViolation);
}

TEST_CASE("mode names round trip") {
  for (auto m : {EvalMode::nocot, EvalMode::cot, EvalMode::onelatent}) CHECK(parse_mode(mode_name(m)) == m);
  CHECK_THROWS_AS(parse_mode("latent"), ContractViolation);
}

TEST_CASE("run_eval accounting and report round trip") {
  taskgen::CorpusSpec spec;
  spec.count = 6;
  spec.seed = 4;
  spec.max_hops = 3;
  const auto corpus = taskgen::gen_corpus(spec);
  const auto st = tiny_state(corpus);

  EvalConfig cfg;
  cfg.mode = EvalMode::onelatent;
  cfg.decode_budget = 5;
  const auto with = run_eval(st, corpus, cfg, "chain");
  cfg.count_latent = false;
  const auto without = run_eval(st, corpus, cfg, "chain");
  REQUIRE(with.records.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(with.records[i].output_len == without.records[i].output_len + 1);
    CHECK(with.records[i].output_text == without.records[i].output_text);
  }
  CHECK(with.avg_out >= 1.0);
  CHECK(validate_report(with));
  CHECK(with.otc == otc(with.accuracy, with.avg_out));

  cfg.workers = 3;
  cfg.count_latent = true;
  CHECK(report_json(run_eval(st, corpus, cfg, "chain")) == report_json(with));

  const auto back = report_from_json(report_json(with));
  CHECK(report_json(back) == report_json(with));
  CHECK_THROWS_AS(report_from_json("{}"), FormatError);

  cfg.mode = EvalMode::nocot;
  const auto nocot = run_eval(st, corpus, cfg, "chain");
  CHECK(nocot.n_latents == 0);
  CHECK(validate_report(nocot));
}

TEST_CASE("validate_report catches inconsistent summaries") {
  EvalReport r;
  r.mode = EvalMode::onelatent;
  r.n_latents = 1;
  r.records.resize(2);
  r.records[0].correct = true;
  r.records[0].output_len = 3;
  r.records[1].output_len = 3;
  aggregate(r);
  CHECK(r.accuracy == 50.0);
  CHECK(r.avg_out == 3.0);
  CHECK(validate_report(r));
  std::string why;
  r.otc += 1;
  CHECK_FALSE(validate_report(r, &why));
  CHECK_FALSE(why.empty());
  aggregate(r);
  r.compression = CompressionBlock{30, 3, 7};
  CHECK_FALSE(validate_report(r));
  r.compression = compression_ratio(30, 3);
  CHECK(validate_report(r));
}
