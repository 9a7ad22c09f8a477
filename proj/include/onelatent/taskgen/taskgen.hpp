#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace onelatent::taskgen {

enum class TaskKind { chain, arith };

std::string kind_name(TaskKind k);
TaskKind parse_kind(const std::string& s);

struct Sample {
  std::string sample_id;
  TaskKind kind = TaskKind::chain;
  std::uint64_t seed = 0;
  std::string question;
  std::string cot;
  std::string answer;
  int hops = 1;

  bool operator==(const Sample&) const = default;
};

// Category names of the chain task: onset + vowel + "mpus" (wumpus, lempus...).
std::vector<std::string> category_lexicon(std::size_t n);

struct ChainOptions {
  std::size_t vocab_size = 40;  // category pool
  int distractors = 2;
  bool branching = true;        // distractors hang off the chain; else they are disjoint pairs
  std::optional<bool> label;    // forced answer; drawn from the seed otherwise
};

// "Every A is a B ." facts along a chain from the entity's category to the
// query category Z; only the edge into Z may be negated. Distractor facts
// branch off the chain into categories that never lead to Z. The CoT lists one
// derived membership per hop: "E is a C1 . ... E is [not] a Z ."
Sample gen_chain_task(std::uint64_t seed, int hops, const ChainOptions& opts = {});

struct ArithOptions {
  int max_value = 99;  // every intermediate stays in [0, max_value]
  int max_operand = 9;
};

// "What is (2+3)*4 ?" with CoT "2+3=5 5*4=20" and answer "#### 20".
Sample gen_arith_task(std::uint64_t seed, int steps, const ArithOptions& opts = {});

struct CorpusSpec {
  TaskKind kind = TaskKind::chain;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  int min_hops = 1;
  int max_hops = 8;
  ChainOptions chain;
  ArithOptions arith;
  std::string id_prefix;  // defaults to the kind name
};

// Per-sample seeds are derive_seed(seed, index); chain labels alternate with
// the index parity so the corpus is exactly balanced.
std::vector<Sample> gen_corpus(const CorpusSpec& spec);

// JSON-lines manifest, one {sample_id, kind, seed, question, cot, answer, hops}
// object per line.
std::string to_jsonl(const std::vector<Sample>& samples);
std::vector<Sample> from_jsonl(const std::string& text);
void write_manifest(const std::vector<Sample>& samples, const std::string& path);
std::vector<Sample> read_manifest(const std::string& path);

// Independent solvers over the question text.
bool solve_chain(const std::string& question);
int solve_arith(const std::string& question);

// ---- CoT expansion with judge validation ----

class Expander {
 public:
  virtual ~Expander() = default;
  virtual std::string id() const = 0;
  // Proposes a longer CoT; `iteration` counts from 0.
  virtual std::string propose(const Sample& s, const std::string& cot, int iteration) const = 0;
};

class Judge {
 public:
  virtual ~Judge() = default;
  virtual std::string id() const = 0;
  virtual bool validate(const Sample& s, const std::string& cot, const std::string& answer) const = 0;
};

// Inserts justification steps: for chains, the question fact behind each
// derived membership; for arithmetic, "so the value is n ." after each step.
class ReferenceExpander : public Expander {
 public:
  std::string id() const override { return "reference"; }
  std::string propose(const Sample& s, const std::string& cot, int iteration) const override;
};

// Accepts a CoT when every sentence is a question fact or a membership
// entailed by the facts (chain), or every equation is correct (arith), and the
// concluding step agrees with the answer.
class ReferenceJudge : public Judge {
 public:
  std::string id() const override { return "reference"; }
  bool validate(const Sample& s, const std::string& cot, const std::string& answer) const override;
};

// Slot for an LLM-backed expander or judge. Not implemented at desk scale.
class RemoteLlmAdapter : public Expander, public Judge {
 public:
  std::string id() const override { return "remote-llm"; }
  std::string propose(const Sample& s, const std::string& cot, int iteration) const override;
  bool validate(const Sample& s, const std::string& cot, const std::string& answer) const override;
};

std::unique_ptr<Expander> make_expander(const std::string& id);
std::unique_ptr<Judge> make_judge(const std::string& id);

struct ExpansionConfig {
  std::size_t target_length = 0;  // characters
  int max_iterations = 4;
  std::string expander = "reference";
  std::string judge = "reference";
};

struct ExpansionResult {
  Sample sample;
  int iterations = 0;  // loop bodies executed
  int accepted = 0;
  int rejected = 0;
};

// Grows the CoT until it reaches the target length or the iteration budget
// runs out. Proposals are kept only when the judge accepts them and they do
// not shorten the CoT. Throws CorruptSampleError when the judge rejects the
// original CoT.
ExpansionResult expand_cot(const Sample& s, const ExpansionConfig& cfg, const Expander& expander, const Judge& judge);
ExpansionResult expand_cot(const Sample& s, const ExpansionConfig& cfg);

// Long-chain set: hops in [8, 16], CoTs expanded toward `target_length`.
std::vector<Sample> gen_enhanced_set(std::size_t count, std::uint64_t seed, std::size_t target_length,
                                     int max_iterations = 16);

}  // namespace onelatent::taskgen
