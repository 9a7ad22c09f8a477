#include <doctest.h>

#include <map>
#include <regex>
#include <set>

#include "onelatent/taskgen/taskgen.hpp"
#include "onelatent/util/error.hpp"
#include "onelatent/util/rng.hpp"

using namespace onelatent;
using namespace onelatent::taskgen;

namespace {

// Reachability over the positive "Every A is a B." edges, starting from the
// entity's stated categories, by depth-first search.
bool reachable(const std::string& question) {
  static const std::regex fact(R"((Every (\w+)|(\w+)) is (not )?a (\w+)\.)");
  static const std::regex query(R"(Is (\w+) a (\w+)\?$)");
  std::smatch q;
  REQUIRE(std::regex_search(question, q, query));
  const std::string entity = q[1], target = q[2];
  std::multimap<std::string, std::string> next;
  std::vector<std::string> stack;
  for (auto it = std::sregex_iterator(question.begin(), question.end(), fact); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    if (m[4].matched) continue;
    if (m[2].matched) {
      next.emplace(m[2], m[5]);
    } else if (m[3] == entity) {
      stack.push_back(m[5]);
    }
  }
  std::set<std::string> seen;
  while (!stack.empty()) {
    const auto c = stack.back();
    stack.pop_back();
    if (!seen.insert(c).second) continue;
    if (c == target) return true;
    for (auto [b, e] = next.equal_range(c); b != e; ++b) stack.push_back(b->second);
  }
  return false;
}

// Left-to-right evaluation of a fully parenthesized left-nested expression
// such as "((7-2)*3)+4": strip parentheses, then apply operators in order.
int eval_left_nested(std::string expr) {
  std::erase(expr, '(');
  std::erase(expr, ')');
  std::erase(expr, ' ');
  std::size_t i = 0;
  auto number = [&] {
    std::size_t b = i;
    while (i < expr.size() && std::isdigit(static_cast<unsigned char>(expr[i]))) ++i;
    return std::stoi(expr.substr(b, i - b));
  };
  int v = number();
  while (i < expr.size()) {
    const char op = expr[i++];
    const int r = number();
    v = op == '+' ? v + r : op == '-' ? v - r : v * r;
  }
  return v;
}

class CorruptingExpander : public Expander {
 public:
  std::string id() const override { return "corrupt"; }
  std::string propose(const Sample& s, const std::string& cot, int) const override {
    if (s.kind == TaskKind::arith) return cot + " 1+1=3";
    // Restate the conclusion with the opposite polarity.
    const auto start = cot.rfind(". ") == std::string::npos ? 0 : cot.rfind(". ") + 2;
    std::string last = cot.substr(start);
    const auto neg = last.find(" is not a ");
    last = neg != std::string::npos ? last.replace(neg, 10, " is a ") : last.replace(last.find(" is a "), 6, " is not a ");
    return cot + " " + last;
  }
};

class ShrinkingExpander : public Expander {
 public:
  std::string id() const override { return "shrink"; }
  std::string propose(const Sample&, const std::string& cot, int) const override { return cot.substr(0, cot.size() / 2); }
};

}  // namespace

TEST_CASE("same seed gives the same chain sample") {
  const auto a = gen_chain_task(42, 3);
  const auto b = gen_chain_task(42, 3);
  CHECK(a.question == b.question);
  CHECK(a.cot == b.cot);
  CHECK(a.answer == b.answer);
}

TEST_CASE("a one-hop chain has exactly one inference step") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = gen_chain_task(seed, 1);
    CHECK(std::count(s.cot.begin(), s.cot.end(), '.') == 1);
  }
}

TEST_CASE("chain answers agree with a reachability search") {
  CorpusSpec spec;
  spec.count = 10000;
  spec.seed = 5;
  const auto corpus = gen_corpus(spec);
  int mismatches = 0, trues = 0;
  for (const auto& s : corpus) {
    const bool truth = reachable(s.question);
    mismatches += truth != (s.answer == "True");
    trues += truth;
    if (s.answer == "True") CHECK(solve_chain(s.question));
  }
  CHECK(mismatches == 0);
  CHECK(trues == 5000);
}

TEST_CASE("disjoint distractors keep answers and hop counts") {
  ChainOptions opts;
  opts.branching = false;
  opts.distractors = 3;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto s = gen_chain_task(seed, 1 + static_cast<int>(seed % 8), opts);
    CHECK(reachable(s.question) == (s.answer == "True"));
    CHECK(ReferenceJudge{}.validate(s, s.cot, s.answer));
  }
  opts.vocab_size = 5;
  CHECK_THROWS_AS(gen_chain_task(1, 4, opts), ContractViolation);
  CHECK_THROWS_AS(gen_chain_task(1, 0), ContractViolation);
}

TEST_CASE("arithmetic: a single step and agreement with a direct evaluator") {
  const auto one = gen_arith_task(3, 1);
  std::smatch m;
  REQUIRE(std::regex_match(one.cot, m, std::regex(R"((\d+)([-+*])(\d+)=(\d+))")));
  CHECK(one.answer == "#### " + m[4].str());
  ArithOptions opts;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const int steps = 1 + static_cast<int>(seed % 6);
    const auto s = gen_arith_task(seed, steps, opts);
    const std::string expr = s.question.substr(8, s.question.size() - 9);
    const int v = eval_left_nested(expr);
    CHECK(s.answer == "#### " + std::to_string(v));
    CHECK(solve_arith(s.question) == v);
    static const std::regex result(R"(=(\d+))");
    for (auto it = std::sregex_iterator(s.cot.begin(), s.cot.end(), result); it != std::sregex_iterator(); ++it) {
      const int mid = std::stoi((*it)[1]);
      CHECK(mid >= 0);
      CHECK(mid <= opts.max_value);
    }
  }
}

TEST_CASE("corpus manifests are seeded, balanced and round trip") {
  CorpusSpec spec;
  spec.count = 30;
  spec.seed = 77;
  const auto a = gen_corpus(spec);
  const auto b = gen_corpus(spec);
  CHECK(to_jsonl(a) == to_jsonl(b));
  const auto back = from_jsonl(to_jsonl(a));
  REQUIRE(back.size() == a.size());
  CHECK(to_jsonl(back) == to_jsonl(a));
  CHECK(a[0].sample_id == "chain-000000");
  for (const auto& s : a) {
    CHECK(s.hops >= 1);
    CHECK(s.hops <= 8);
  }
  CHECK_THROWS_AS(from_jsonl("{\"sample_id\": 1}\n"), FormatError);
  CHECK_THROWS_AS(from_jsonl("not json\n"), FormatError);
}

TEST_CASE("expansion: zero iterations when the target is already met") {
  const auto s = gen_chain_task(1, 3);
  const auto r = expand_cot(s, {s.cot.size(), 4});
  CHECK(r.iterations == 0);
  CHECK(r.sample.cot == s.cot);
}

TEST_CASE("expansion: an always-corrupting expander leaves the CoT unchanged") {
  for (auto kind : {TaskKind::chain, TaskKind::arith}) {
    const auto s = kind == TaskKind::chain ? gen_chain_task(2, 4) : gen_arith_task(2, 4);
    const auto r = expand_cot(s, {100000, 5}, CorruptingExpander{}, ReferenceJudge{});
    CHECK(r.sample.cot == s.cot);
    CHECK(r.iterations == 5);
    CHECK(r.rejected == 5);
  }
  const auto s = gen_chain_task(2, 4);
  const auto shrink = expand_cot(s, {100000, 3}, ShrinkingExpander{}, ReferenceJudge{});
  CHECK(shrink.sample.cot == s.cot);
}

TEST_CASE("expansion: the reference expander grows valid CoTs and keeps answers") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto s = seed % 2 ? gen_chain_task(seed, 1 + static_cast<int>(seed % 8)) : gen_arith_task(seed, 3);
    const auto r = expand_cot(s, {s.cot.size() * 3, 8});
    CHECK(r.sample.cot.size() >= s.cot.size());
    CHECK(r.sample.answer == s.answer);
    CHECK(ReferenceJudge{}.validate(s, r.sample.cot, s.answer));
    CHECK(r.iterations <= 8);
    CHECK(r.accepted > 0);
  }
}

TEST_CASE("a sample whose own CoT fails the judge is corrupt") {
  auto s = gen_chain_task(9, 3);
  s.answer = s.answer == "True" ? "False" : "True";
  CHECK_THROWS_AS(expand_cot(s, {1000, 2}), CorruptSampleError);
  auto a = gen_arith_task(9, 2);
  a.cot = "1+1=3";
  CHECK_THROWS_AS(expand_cot(a, {1000, 2}), CorruptSampleError);
}

TEST_CASE("the remote adapter slot is not implemented") {
  const auto s = gen_chain_task(1, 1);
  CHECK_THROWS(make_expander("remote-llm")->propose(s, s.cot, 0));
  CHECK_THROWS_AS(make_judge("nope"), ContractViolation);
}

TEST_CASE("enhanced set has long chains") {
  const auto set = gen_enhanced_set(10, 3, 600);
  for (const auto& s : set) {
    CHECK(s.hops >= 8);
    CHECK(s.hops <= 16);
    CHECK(ReferenceJudge{}.validate(s, s.cot, s.answer));
  }
}
