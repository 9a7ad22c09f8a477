#include "onelatent/taskgen/taskgen.hpp"

#include <algorithm>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "onelatent/util/binio.hpp"
#include "onelatent/util/error.hpp"
#include "onelatent/util/rng.hpp"

namespace onelatent::taskgen {

std::string kind_name(TaskKind k) { return k == TaskKind::chain ? "chain" : "arith"; }

TaskKind parse_kind(const std::string& s) {
  if (s == "chain") return TaskKind::chain;
  if (s == "arith") return TaskKind::arith;
  throw ContractViolation("unknown task kind: " + s);
}

namespace {

constexpr const char* kOnsets[] = {"b",  "d",  "f",  "g",  "h",  "j",  "k",  "l",  "m",  "n",  "p",  "r",  "s",  "t",
                                   "v",  "w",  "y",  "z",  "br", "dr", "gr", "kr", "pr", "st", "sh", "th", "sl", "gl"};
constexpr const char* kVowels[] = {"a", "e", "i", "o", "u"};
constexpr const char* kEntities[] = {"Alex", "Sam", "Max", "Rex", "Fae", "Polly", "Stella", "Wren",
                                     "Kit",  "Lou", "Ned", "Bo",  "Ivy", "Gus",   "Remy",   "Tess"};

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(' ');
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(' ');
  return s.substr(b, e - b + 1);
}

// Sentences ending in '.', '?' (terminator kept).
std::vector<std::string> sentences(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    cur.push_back(c);
    if (c == '.' || c == '?') {
      auto t = trim(cur);
      if (!t.empty()) out.push_back(t);
      cur.clear();
    }
  }
  auto t = trim(cur);
  if (!t.empty()) out.push_back(t);
  return out;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

// ---- chain world parsing ----

struct Edge {
  std::string from, to;
  bool negated = false;
};

struct ChainWorld {
  std::string entity, query;
  std::vector<std::string> direct;  // "E is a X."
  std::vector<Edge> edges;          // "Every A is [not] a B."
  std::set<std::string> facts;      // fact sentences verbatim
  bool ok = false;
};

struct Membership {
  std::string subject, object;
  bool negated = false;
  bool ok = false;
};

// "S is a X." or "S is not a X."
Membership parse_membership(const std::string& sentence) {
  Membership m;
  if (sentence.empty() || sentence.back() != '.') return m;
  const auto w = split_ws(sentence.substr(0, sentence.size() - 1));
  if (w.size() == 4 && w[1] == "is" && w[2] == "a") {
    m = {w[0], w[3], false, true};
  } else if (w.size() == 5 && w[1] == "is" && w[2] == "not" && w[3] == "a") {
    m = {w[0], w[4], true, true};
  }
  return m;
}

ChainWorld parse_chain(const std::string& question) {
  ChainWorld world;
  const auto sents = sentences(question);
  if (sents.empty()) return world;
  const auto q = split_ws(sents.back());
  if (q.size() != 4 || q[0] != "Is" || q[2] != "a" || q[3].empty() || q[3].back() != '?') return world;
  world.entity = q[1];
  world.query = q[3].substr(0, q[3].size() - 1);
  for (std::size_t i = 0; i + 1 < sents.size(); ++i) {
    const auto& s = sents[i];
    world.facts.insert(s);
    if (s.starts_with("Every ")) {
      const auto m = parse_membership(s.substr(6));
      if (!m.ok) return world;
      world.edges.push_back({m.subject, m.object, m.negated});
    } else {
      const auto m = parse_membership(s);
      if (!m.ok || m.negated || m.subject != world.entity) return world;
      world.direct.push_back(m.object);
    }
  }
  world.ok = true;
  return world;
}

// ---- arithmetic parsing ----

struct Equation {
  int lhs = 0, rhs = 0, result = 0;
  char op = '+';
};

std::optional<Equation> parse_equation(const std::string& w) {
  Equation e;
  char eq = 0;
  int consumed = 0;
  if (std::sscanf(w.c_str(), "%d%c%d%c%d%n", &e.lhs, &e.op, &e.rhs, &eq, &e.result, &consumed) != 5) return std::nullopt;
  if (eq != '=' || static_cast<std::size_t>(consumed) != w.size()) return std::nullopt;
  if (e.op != '+' && e.op != '-' && e.op != '*') return std::nullopt;
  return e;
}

int apply(char op, int a, int b) {
  switch (op) {
    case '+': return a + b;
    case '-': return a - b;
    default: return a * b;
  }
}

std::optional<int> parse_hash_answer(const std::string& answer) {
  const auto w = split_ws(answer);
  if (w.size() != 2 || w[0] != "####") return std::nullopt;
  try {
    std::size_t pos = 0;
    const int v = std::stoi(w[1], &pos);
    if (pos != w[1].size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace

std::vector<std::string> category_lexicon(std::size_t n) {
  std::vector<std::string> out;
  for (const char* o : kOnsets) {
    for (const char* v : kVowels) {
      if (out.size() == n) return out;
      out.push_back(std::string(o) + v + "mpus");
    }
  }
  if (out.size() < n) throw ContractViolation("category_lexicon: at most " + std::to_string(out.size()) + " names");
  return out;
}

Sample gen_chain_task(std::uint64_t seed, int hops, const ChainOptions& opts) {
  if (hops < 1) throw ContractViolation("gen_chain_task: hops must be >= 1");
  if (opts.distractors < 0) throw ContractViolation("gen_chain_task: negative distractor count");
  Rng rng(seed);
  const bool label = opts.label.has_value() ? *opts.label : rng.coin();
  const auto need = static_cast<std::size_t>(hops + 1 + opts.distractors * (opts.branching ? 1 : 2));
  auto pool = category_lexicon(opts.vocab_size);
  if (pool.size() < need) {
    throw ContractViolation("gen_chain_task: vocabulary of " + std::to_string(pool.size()) + " cannot hold " +
                            std::to_string(need) + " categories");
  }
  rng.shuffle(pool);
  const std::string entity = kEntities[rng.below(std::size(kEntities))];
  std::vector<std::string> chain(pool.begin(), pool.begin() + hops + 1);
  std::vector<std::string> facts;
  facts.push_back(entity + " is a " + chain[0] + ".");
  for (int i = 1; i <= hops; ++i) {
    const bool neg = (i == hops) && !label;
    facts.push_back("Every " + chain[i - 1] + " is " + (neg ? "not " : "") + "a " + chain[i] + ".");
  }
  for (int j = 0; j < opts.distractors; ++j) {
    const auto& from = opts.branching ? chain[rng.below(static_cast<std::uint64_t>(hops + 1))]
                                      : pool[hops + 1 + opts.distractors + j];
    const auto& to = pool[hops + 1 + j];
    facts.push_back("Every " + from + " is " + (rng.coin() ? "not " : "") + "a " + to + ".");
  }
  rng.shuffle(facts);

  Sample s;
  s.kind = TaskKind::chain;
  s.seed = seed;
  s.hops = hops;
  s.question = join(facts, " ") + " Is " + entity + " a " + chain[hops] + "?";
  std::vector<std::string> steps;
  for (int i = 1; i <= hops; ++i) {
    const bool neg = (i == hops) && !label;
    steps.push_back(entity + " is " + (neg ? "not " : "") + "a " + chain[i] + ".");
  }
  s.cot = join(steps, " ");
  s.answer = label ? "True" : "False";
  return s;
}

Sample gen_arith_task(std::uint64_t seed, int steps, const ArithOptions& opts) {
  if (steps < 1) throw ContractViolation("gen_arith_task: steps must be >= 1");
  if (opts.max_operand < 1 || opts.max_value < opts.max_operand) {
    throw ContractViolation("gen_arith_task: need 1 <= max_operand <= max_value");
  }
  Rng rng(seed);
  int value = rng.range(1, opts.max_operand);
  std::string expr = std::to_string(value);
  std::vector<std::string> cot;
  for (int i = 0; i < steps; ++i) {
    const int b = rng.range(1, opts.max_operand);
    std::vector<char> ops;
    if (value + b <= opts.max_value) ops.push_back('+');
    if (value - b >= 0) ops.push_back('-');
    if (value * b <= opts.max_value) ops.push_back('*');
    const char op = ops[rng.below(ops.size())];
    const int next = apply(op, value, b);
    cot.push_back(std::to_string(value) + op + std::to_string(b) + "=" + std::to_string(next));
    expr = (i == 0 ? expr : "(" + expr + ")") + op + std::to_string(b);
    value = next;
  }
  Sample s;
  s.kind = TaskKind::arith;
  s.seed = seed;
  s.hops = steps;
  s.question = "What is " + expr + "?";
  s.cot = join(cot, " ");
  s.answer = "#### " + std::to_string(value);
  return s;
}

std::vector<Sample> gen_corpus(const CorpusSpec& spec) {
  if (spec.min_hops < 1 || spec.min_hops > spec.max_hops) throw ContractViolation("gen_corpus: bad hop range");
  const std::string prefix = spec.id_prefix.empty() ? kind_name(spec.kind) : spec.id_prefix;
  std::vector<Sample> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    const std::uint64_t seed = derive_seed(spec.seed, i);
    Rng rng(seed ^ 0xA5A5A5A5ull);
    const int hops = spec.min_hops + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_hops - spec.min_hops + 1)));
    Sample s;
    if (spec.kind == TaskKind::chain) {
      ChainOptions opts = spec.chain;
      opts.label = (i % 2 == 0);
      s = gen_chain_task(seed, hops, opts);
    } else {
      s = gen_arith_task(seed, hops, spec.arith);
    }
    char id[32];
    std::snprintf(id, sizeof id, "-%06zu", i);
    s.sample_id = prefix + id;
    out.push_back(std::move(s));
  }
  return out;
}

std::string to_jsonl(const std::vector<Sample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["sample_id"] = s.sample_id;
    j["kind"] = kind_name(s.kind);
    j["seed"] = s.seed;
    j["question"] = s.question;
    j["cot"] = s.cot;
    j["answer"] = s.answer;
    j["hops"] = s.hops;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<Sample> from_jsonl(const std::string& text) {
  std::vector<Sample> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Sample s;
      s.sample_id = j.at("sample_id").get<std::string>();
      s.kind = parse_kind(j.at("kind").get<std::string>());
      s.seed = j.at("seed").get<std::uint64_t>();
      s.question = j.at("question").get<std::string>();
      s.cot = j.at("cot").get<std::string>();
      s.answer = j.at("answer").get<std::string>();
      s.hops = j.at("hops").get<int>();
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_manifest(const std::vector<Sample>& samples, const std::string& path) {
  const auto text = to_jsonl(samples);
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<Sample> read_manifest(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return from_jsonl(std::string(bytes.begin(), bytes.end()));
}

bool solve_chain(const std::string& question) {
  const auto w = parse_chain(question);
  if (!w.ok) throw ContractViolation("solve_chain: unparseable question");
  std::set<std::string> member(w.direct.begin(), w.direct.end());
  // Closed-world fixpoint over positive edges.
  for (bool changed = true; changed;) {
    changed = false;
    for (const auto& e : w.edges) {
      if (!e.negated && member.contains(e.from) && member.insert(e.to).second) changed = true;
    }
  }
  return member.contains(w.query);
}

namespace {

// Recursive descent over + - * and parentheses, with the usual precedence.
struct ExprParser {
  const std::string& s;
  std::size_t i = 0;

  int expr() {
    int v = term();
    while (i < s.size() && (s[i] == '+' || s[i] == '-')) {
      const char op = s[i++];
      const int r = term();
      v = op == '+' ? v + r : v - r;
    }
    return v;
  }
  int term() {
    int v = atom();
    while (i < s.size() && s[i] == '*') {
      ++i;
      v *= atom();
    }
    return v;
  }
  int atom() {
    if (i < s.size() && s[i] == '(') {
      ++i;
      const int v = expr();
      if (i >= s.size() || s[i] != ')') throw ContractViolation("solve_arith: unbalanced parentheses");
      ++i;
      return v;
    }
    const std::size_t b = i;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
    if (b == i) throw ContractViolation("solve_arith: expected a number");
    return std::stoi(s.substr(b, i - b));
  }
};

}  // namespace

int solve_arith(const std::string& question) {
  const std::string pre = "What is ";
  if (!question.starts_with(pre) || question.back() != '?') throw ContractViolation("solve_arith: unparseable question");
  std::string expr;
  for (char c : question.substr(pre.size(), question.size() - pre.size() - 1)) {
    if (c != ' ') expr.push_back(c);
  }
  ExprParser p{expr};
  const int v = p.expr();
  if (p.i != expr.size()) throw ContractViolation("solve_arith: trailing characters");
  return v;
}

// ---- expansion ----

std::string ReferenceExpander::propose(const Sample& s, const std::string& cot, int) const {
  if (s.kind == TaskKind::chain) {
    const auto world = parse_chain(s.question);
    if (!world.ok) return cot;
    auto sents = sentences(cot);
    for (std::size_t i = 0; i < sents.size(); ++i) {
      const auto m = parse_membership(sents[i]);
      if (!m.ok || m.subject != world.entity) continue;
      // The fact whose object is this membership's category.
      std::string why;
      for (const auto& e : world.edges) {
        if (e.to == m.object && e.negated == m.negated) why = "Every " + e.from + " is " + (e.negated ? "not " : "") + "a " + e.to + ".";
      }
      if (why.empty() || (i > 0 && sents[i - 1] == why)) continue;
      sents.insert(sents.begin() + static_cast<std::ptrdiff_t>(i), why);
      return join(sents, " ");
    }
    return cot;
  }
  // Arithmetic: restate the value after the first step that lacks it.
  auto words = split_ws(cot);
  for (std::size_t i = 0; i < words.size(); ++i) {
    const auto e = parse_equation(words[i]);
    if (!e) continue;
    if (i + 1 < words.size() && words[i + 1] == "so") continue;
    const std::vector<std::string> restate = {"so", "the", "value", "is", std::to_string(e->result) + "."};
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(i + 1), restate.begin(), restate.end());
    return join(words, " ");
  }
  return cot;
}

bool ReferenceJudge::validate(const Sample& s, const std::string& cot, const std::string& answer) const {
  if (trim(cot).empty()) return false;
  if (s.kind == TaskKind::chain) {
    if (answer != "True" && answer != "False") return false;
    const auto world = parse_chain(s.question);
    if (!world.ok) return false;
    std::set<std::string> known(world.direct.begin(), world.direct.end());
    std::optional<bool> conclusion;
    for (const auto& sent : sentences(cot)) {
      if (world.facts.contains(sent)) continue;
      const auto m = parse_membership(sent);
      if (!m.ok || m.subject != world.entity) return false;
      // Each derived step must follow from a category already established.
      bool supported = !m.negated && known.contains(m.object);
      for (const auto& e : world.edges) {
        if (e.to == m.object && e.negated == m.negated && known.contains(e.from)) supported = true;
      }
      if (!supported) return false;
      if (!m.negated) known.insert(m.object);
      if (m.object == world.query) conclusion = !m.negated;
    }
    return conclusion.has_value() && *conclusion == (answer == "True");
  }
  const auto expected = parse_hash_answer(answer);
  if (!expected) return false;
  const auto words = split_ws(cot);
  std::optional<int> last;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (const auto e = parse_equation(words[i])) {
      if (apply(e->op, e->lhs, e->rhs) != e->result) return false;
      if (last && e->lhs != *last) return false;
      last = e->result;
      continue;
    }
    if (words[i] != "so" || i + 4 >= words.size() || !last) return false;
    if (words[i + 1] != "the" || words[i + 2] != "value" || words[i + 3] != "is") return false;
    if (words[i + 4] != std::to_string(*last) + ".") return false;
    i += 4;
  }
  return last.has_value() && *last == *expected;
}

std::string RemoteLlmAdapter::propose(const Sample&, const std::string&, int) const {
  throw std::logic_error("remote-llm expander is not available in this build");
}

bool RemoteLlmAdapter::validate(const Sample&, const std::string&, const std::string&) const {
  throw std::logic_error("remote-llm judge is not available in this build");
}

std::unique_ptr<Expander> make_expander(const std::string& id) {
  if (id == "reference") return std::make_unique<ReferenceExpander>();
  if (id == "remote-llm") return std::make_unique<RemoteLlmAdapter>();
  throw ContractViolation("unknown expander: " + id);
}

std::unique_ptr<Judge> make_judge(const std::string& id) {
  if (id == "reference") return std::make_unique<ReferenceJudge>();
  if (id == "remote-llm") return std::make_unique<RemoteLlmAdapter>();
  throw ContractViolation("unknown judge: " + id);
}

ExpansionResult expand_cot(const Sample& s, const ExpansionConfig& cfg, const Expander& expander, const Judge& judge) {
  if (cfg.max_iterations < 1) throw ContractViolation("expand_cot: max_iterations must be >= 1");
  if (!judge.validate(s, s.cot, s.answer)) {
    throw CorruptSampleError("expand_cot: judge rejects the original CoT of " + s.sample_id);
  }
  ExpansionResult r{s, 0, 0, 0};
  for (int k = 0; k < cfg.max_iterations; ++k) {
    if (r.sample.cot.size() >= cfg.target_length) break;
    ++r.iterations;
    std::string proposal = expander.propose(r.sample, r.sample.cot, k);
    if (proposal.size() >= r.sample.cot.size() && judge.validate(r.sample, proposal, s.answer)) {
      r.sample.cot = std::move(proposal);
      ++r.accepted;
    } else {
      ++r.rejected;
    }
  }
  return r;
}

ExpansionResult expand_cot(const Sample& s, const ExpansionConfig& cfg) {
  return expand_cot(s, cfg, *make_expander(cfg.expander), *make_judge(cfg.judge));
}

std::vector<Sample> gen_enhanced_set(std::size_t count, std::uint64_t seed, std::size_t target_length,
                                     int max_iterations) {
  CorpusSpec spec;
  spec.kind = TaskKind::chain;
  spec.count = count;
  spec.seed = seed;
  spec.min_hops = 8;
  spec.max_hops = 16;
  spec.chain.distractors = 4;
  spec.id_prefix = "enhanced";
  auto base = gen_corpus(spec);
  ExpansionConfig cfg;
  cfg.target_length = target_length;
  cfg.max_iterations = max_iterations;
  for (auto& s : base) s = expand_cot(s, cfg).sample;
  return base;
}

}  // namespace onelatent::taskgen
