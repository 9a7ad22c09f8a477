#pragma once

#include <optional>
#include <string>
#include <vector>

#include "onelatent/model/checkpoint.hpp"
#include "onelatent/taskgen/taskgen.hpp"

namespace onelatent::eval {

enum class AnswerFamily { hash_marker, final_sentence };

struct AnswerNormalizer {
  AnswerFamily family = AnswerFamily::hash_marker;
  std::string marker = "####";
};

AnswerNormalizer normalizer_for(taskgen::TaskKind kind);

// Hash-marker: text after the last marker with whitespace and commas removed,
// numbers in canonical form ("007" -> "7", "2.50" -> "2.5"). Final sentence:
// terminal punctuation stripped, last sentence, lowercased, whitespace
// collapsed. Empty when nothing can be extracted.
std::string extract_answer(const std::string& text, const AnswerNormalizer& norm);

// Acc (percent) / AvgOut; zero when either is zero.
double otc(double accuracy_percent, double avg_out);

// Half-away-from-zero rounding to `decimals` places.
double round_to(double x, int decimals);

enum class EvalMode { nocot, cot, onelatent };
std::string mode_name(EvalMode m);
EvalMode parse_mode(const std::string& s);

struct EvalConfig {
  EvalMode mode = EvalMode::onelatent;
  std::size_t n_latents = 1;
  std::size_t decode_budget = 64;
  std::optional<AnswerNormalizer> normalizer;  // per task kind when unset
  bool count_latent = true;  // latent slots count as output tokens
  bool count_eos = true;     // an emitted EOS counts as an output token
  std::size_t workers = 1;
};

struct SampleRecord {
  std::string sample_id;
  std::size_t prompt_len = 0;
  std::size_t output_len = 0;
  std::string output_text;
  std::string extracted;
  std::string gold;
  bool correct = false;
  bool overflow = false;
};

struct CompressionBlock {
  double co = 0, no = 0, cr = 0;
};

struct EvalReport {
  std::string benchmark;
  EvalMode mode = EvalMode::onelatent;
  std::size_t n_latents = 0;
  double accuracy = 0;  // percent
  double avg_out = 0;
  double avg_in = 0;
  double otc = 0;
  std::size_t overflow_count = 0;
  bool count_latent = true;
  bool count_eos = true;
  std::vector<SampleRecord> records;
  std::optional<CompressionBlock> compression;
};

// Prompt for every mode: [BOS, q, begin-latent]. The latent slots (onelatent
// mode only) and the end-latent marker are then forced; everything after is
// greedy. The forced end-latent marker is counted neither as prompt nor as
// output.
EvalReport run_eval(const model::ModelState& state, const std::vector<taskgen::Sample>& corpus,
                    const EvalConfig& cfg, const std::string& benchmark);

// Recomputes accuracy / averages / OTC from the per-sample records.
void aggregate(EvalReport& r);
// Checks the OTC identity and AvgOut >= N (when latents are counted).
bool validate_report(const EvalReport& r, std::string* why = nullptr);

// #CO = CoT AvgOut, #NO = latent AvgOut, #CR = #CO/#NO rounded to 0.1.
CompressionBlock compression_ratio(double co, double no);
CompressionBlock compression_report(const EvalReport& cot, const EvalReport& latent);

struct MacroAverage {
  double accuracy = 0;
  double avg_out = 0;
  double otc_of_means = 0;  // macroAcc / macroOut
  double mean_of_otcs = 0;  // unweighted mean of per-report OTC
};

MacroAverage macro_average(const std::vector<EvalReport>& reports);
// Same, from (Acc, AvgOut) pairs and their OTC cells.
MacroAverage macro_average(const std::vector<double>& acc, const std::vector<double>& out,
                           const std::vector<double>& otcs);

std::string report_json(const EvalReport& r);
EvalReport report_from_json(const std::string& text);
std::string report_table(const std::vector<EvalReport>& reports);
std::string records_csv(const EvalReport& r);

}  // namespace onelatent::eval
