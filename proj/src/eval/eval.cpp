#include "onelatent/eval/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <thread>

#include "onelatent/latent/latent.hpp"
#include "onelatent/util/error.hpp"

namespace onelatent::eval {

AnswerNormalizer normalizer_for(taskgen::TaskKind kind) {
  AnswerNormalizer n;
  n.family = kind == taskgen::TaskKind::arith ? AnswerFamily::hash_marker : AnswerFamily::final_sentence;
  return n;
}

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string collapse_ws(const std::string& s) {
  std::string out;
  bool pending = false;
  for (char c : s) {
    if (is_space(c)) {
      pending = !out.empty();
    } else {
      if (pending) out.push_back(' ');
      pending = false;
      out.push_back(c);
    }
  }
  return out;
}

// "-007.50" -> "-7.5"; non-numbers come back unchanged.
std::string canonical_number(const std::string& s) {
  std::size_t i = 0;
  std::string sign;
  if (i < s.size() && (s[i] == '-' || s[i] == '+')) {
    if (s[i] == '-') sign = "-";
    ++i;
  }
  std::string ip, fp;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ip.push_back(s[i++]);
  bool dot = false;
  if (i < s.size() && s[i] == '.') {
    dot = true;
    ++i;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) fp.push_back(s[i++]);
  }
  if (i != s.size() || (ip.empty() && fp.empty()) || (dot && fp.empty() && ip.empty())) return s;
  ip.erase(0, std::min(ip.find_first_not_of('0'), ip.size()));
  if (ip.empty()) ip = "0";
  while (!fp.empty() && fp.back() == '0') fp.pop_back();
  std::string out = ip + (fp.empty() ? "" : "." + fp);
  if (out == "0") sign.clear();
  return sign + out;
}

}  // namespace

std::string extract_answer(const std::string& text, const AnswerNormalizer& norm) {
  if (norm.family == AnswerFamily::hash_marker) {
    const auto pos = norm.marker.empty() ? std::string::npos : text.rfind(norm.marker);
    if (pos == std::string::npos) return "";
    std::string rest;
    for (char c : text.substr(pos + norm.marker.size())) {
      if (!is_space(c) && c != ',') rest.push_back(c);
    }
    return canonical_number(rest);
  }
  std::string s = collapse_ws(text);
  while (!s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '?' || is_space(s.back()))) s.pop_back();
  const auto cut = s.find_last_of(".!?");
  if (cut != std::string::npos) s = s.substr(cut + 1);
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return collapse_ws(s);
}

double otc(double accuracy_percent, double avg_out) {
  if (accuracy_percent == 0.0 || avg_out == 0.0) return 0.0;
  return accuracy_percent / avg_out;
}

double round_to(double x, int decimals) {
  const double scale = std::pow(10.0, decimals);
  // Nudge by a few ulps so that cells like 3.905 (stored as 3.90499...) round
  // the way they read.
  const double y = x * scale;
  return std::round(y + std::copysign(1e-9 * std::max(1.0, std::abs(y)), y)) / scale;
}

std::string mode_name(EvalMode m) {
  switch (m) {
    case EvalMode::nocot: return "nocot";
    case EvalMode::cot: return "cot";
    default: return "onelatent";
  }
}

EvalMode parse_mode(const std::string& s) {
  if (s == "nocot") return EvalMode::nocot;
  if (s == "cot") return EvalMode::cot;
  if (s == "onelatent") return EvalMode::onelatent;
  throw ContractViolation("unknown eval mode: " + s);
}

namespace {

SampleRecord eval_one(const model::ModelState& state, const taskgen::Sample& s, const EvalConfig& cfg,
                      const latent::SpecialIds& ids) {
  const auto& tok = state.tokenizer;
  const AnswerNormalizer norm = cfg.normalizer.value_or(normalizer_for(s.kind));
  SampleRecord rec;
  rec.sample_id = s.sample_id;
  rec.gold = extract_answer(s.answer, norm);

  std::vector<int> prompt{ids.bos};
  const auto q = tok.encode(s.question);
  prompt.insert(prompt.end(), q.begin(), q.end());
  prompt.push_back(ids.begin_latent);
  rec.prompt_len = prompt.size();

  model::LatentPlan plan;
  plan.slots = cfg.mode == EvalMode::onelatent ? cfg.n_latents : 0;
  plan.latent_id = ids.latent;
  plan.end_latent_id = ids.end_latent;
  const std::vector<int> banned{ids.pad, ids.bos, ids.begin_latent, ids.latent, ids.end_latent};
  try {
    const auto gen = model::generate(state.model, prompt, cfg.decode_budget, plan, ids.eos, banned);
    std::vector<int> text_ids = gen.tokens;
    if (gen.hit_eos) text_ids.pop_back();
    rec.output_text = tok.decode(text_ids);
    rec.output_len = text_ids.size() + (gen.hit_eos && cfg.count_eos ? 1 : 0) + (cfg.count_latent ? plan.slots : 0);
    rec.extracted = extract_answer(rec.output_text, norm);
    rec.correct = !rec.extracted.empty() && rec.extracted == rec.gold;
  } catch (const OverflowError&) {
    rec.overflow = true;
    rec.correct = false;
    rec.output_len = 0;
  }
  return rec;
}

}  // namespace

EvalReport run_eval(const model::ModelState& state, const std::vector<taskgen::Sample>& corpus,
                    const EvalConfig& cfg, const std::string& benchmark) {
  if (corpus.empty()) throw ContractViolation("run_eval: empty corpus");
  const auto ids = latent::special_ids(state.tokenizer);
  if (ids.begin_latent < 0 || ids.latent < 0 || ids.end_latent < 0) {
    throw ContractViolation("run_eval: tokenizer lacks the latent special tokens");
  }
  EvalReport r;
  r.benchmark = benchmark;
  r.mode = cfg.mode;
  r.n_latents = cfg.mode == EvalMode::onelatent ? cfg.n_latents : 0;
  r.count_latent = cfg.count_latent;
  r.count_eos = cfg.count_eos;
  r.records.resize(corpus.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.workers, corpus.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < corpus.size(); ++i) r.records[i] = eval_one(state, corpus[i], cfg, ids);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < corpus.size(); i += workers) r.records[i] = eval_one(state, corpus[i], cfg, ids);
      });
    }
    for (auto& t : pool) t.join();
  }
  aggregate(r);
  return r;
}

void aggregate(EvalReport& r) {
  double correct = 0, out = 0, in = 0;
  std::size_t overflow = 0;
  for (const auto& rec : r.records) {
    correct += rec.correct ? 1.0 : 0.0;
    out += static_cast<double>(rec.output_len);
    in += static_cast<double>(rec.prompt_len);
    overflow += rec.overflow ? 1 : 0;
  }
  const double n = static_cast<double>(r.records.size());
  r.accuracy = n > 0 ? 100.0 * correct / n : 0.0;
  r.avg_out = n > 0 ? out / n : 0.0;
  r.avg_in = n > 0 ? in / n : 0.0;
  r.otc = otc(r.accuracy, r.avg_out);
  r.overflow_count = overflow;
}

bool validate_report(const EvalReport& r, std::string* why) {
  auto fail = [&](const std::string& m) {
    if (why) *why = m;
    return false;
  };
  if (std::abs(r.otc - otc(r.accuracy, r.avg_out)) > 0.005) return fail("otc != acc / avg_out");
  const std::size_t non_overflow =
      static_cast<std::size_t>(std::count_if(r.records.begin(), r.records.end(), [](const auto& x) { return !x.overflow; }));
  if (r.count_latent && non_overflow == r.records.size() && r.avg_out + 1e-12 < static_cast<double>(r.n_latents)) {
    return fail("avg_out < number of latent slots");
  }
  if (r.compression) {
    const auto& c = *r.compression;
    if (c.no > 0 && std::abs(c.cr - c.co / c.no) > 0.05) return fail("#CR != #CO / #NO");
  }
  return true;
}

CompressionBlock compression_ratio(double co, double no) {
  if (no <= 0) throw ContractViolation("compression_ratio: #NO must be positive");
  return {co, no, round_to(co / no, 1)};
}

CompressionBlock compression_report(const EvalReport& cot, const EvalReport& latent) {
  bool same = cot.benchmark == latent.benchmark && cot.records.size() == latent.records.size();
  for (std::size_t i = 0; same && i < cot.records.size(); ++i) {
    same = cot.records[i].sample_id == latent.records[i].sample_id;
  }
  if (!same) throw ContractViolation("compression_report: reports cover different corpora");
  return compression_ratio(cot.avg_out, latent.avg_out);
}

MacroAverage macro_average(const std::vector<double>& acc, const std::vector<double>& out,
                           const std::vector<double>& otcs) {
  if (acc.empty() || acc.size() != out.size() || acc.size() != otcs.size()) {
    throw ContractViolation("macro_average: need one or more complete rows");
  }
  MacroAverage m;
  const double n = static_cast<double>(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    m.accuracy += acc[i];
    m.avg_out += out[i];
    m.mean_of_otcs += otcs[i];
  }
  m.accuracy /= n;
  m.avg_out /= n;
  m.mean_of_otcs /= n;
  m.otc_of_means = otc(m.accuracy, m.avg_out);
  return m;
}

MacroAverage macro_average(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw ContractViolation("macro_average: no reports");
  std::vector<double> acc, out, otcs;
  for (const auto& r : reports) {
    acc.push_back(r.accuracy);
    out.push_back(r.avg_out);
    otcs.push_back(r.otc);
  }
  return macro_average(acc, out, otcs);
}

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["benchmark"] = r.benchmark;
  j["mode"] = mode_name(r.mode);
  j["n_latents"] = r.n_latents;
  j["accuracy"] = r.accuracy;
  j["avg_out"] = r.avg_out;
  j["avg_in"] = r.avg_in;
  j["otc"] = r.otc;
  j["overflow_count"] = r.overflow_count;
  j["accounting"] = {{"count_latent", r.count_latent}, {"count_eos", r.count_eos}, {"end_latent_counted", false}};
  if (r.compression) {
    j["compression"] = {{"co", r.compression->co}, {"no", r.compression->no}, {"cr", r.compression->cr}};
  }
  auto recs = nlohmann::ordered_json::array();
  for (const auto& x : r.records) {
    nlohmann::ordered_json o;
    o["sample_id"] = x.sample_id;
    o["prompt_len"] = x.prompt_len;
    o["output_len"] = x.output_len;
    o["output"] = x.output_text;
    o["extracted"] = x.extracted;
    o["gold"] = x.gold;
    o["correct"] = x.correct;
    o["overflow"] = x.overflow;
    recs.push_back(std::move(o));
  }
  j["records"] = std::move(recs);
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    EvalReport r;
    r.benchmark = j.at("benchmark").get<std::string>();
    r.mode = parse_mode(j.at("mode").get<std::string>());
    r.n_latents = j.at("n_latents").get<std::size_t>();
    r.accuracy = j.at("accuracy").get<double>();
    r.avg_out = j.at("avg_out").get<double>();
    r.avg_in = j.at("avg_in").get<double>();
    r.otc = j.at("otc").get<double>();
    r.overflow_count = j.at("overflow_count").get<std::size_t>();
    r.count_latent = j.at("accounting").at("count_latent").get<bool>();
    r.count_eos = j.at("accounting").at("count_eos").get<bool>();
    if (j.contains("compression")) {
      const auto& c = j["compression"];
      r.compression = CompressionBlock{c.at("co").get<double>(), c.at("no").get<double>(), c.at("cr").get<double>()};
    }
    for (const auto& o : j.at("records")) {
      SampleRecord x;
      x.sample_id = o.at("sample_id").get<std::string>();
      x.prompt_len = o.at("prompt_len").get<std::size_t>();
      x.output_len = o.at("output_len").get<std::size_t>();
      x.output_text = o.at("output").get<std::string>();
      x.extracted = o.at("extracted").get<std::string>();
      x.gold = o.at("gold").get<std::string>();
      x.correct = o.at("correct").get<bool>();
      x.overflow = o.at("overflow").get<bool>();
      r.records.push_back(std::move(x));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("eval report: ") + e.what());
  }
}

namespace {

std::string fmt(double x, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, round_to(x, decimals));
  return buf;
}

std::string pad(const std::string& s, std::size_t w, bool left = false) {
  if (s.size() >= w) return s;
  return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
}

}  // namespace

std::string report_table(const std::vector<EvalReport>& reports) {
  const std::vector<std::string> head = {"benchmark", "mode", "Acc", "AvgOut", "Latents", "OTC", "AvgIn", "#CR"};
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : reports) {
    rows.push_back({r.benchmark, mode_name(r.mode), fmt(r.accuracy, 2), fmt(r.avg_out, 2), std::to_string(r.n_latents),
                    fmt(r.otc, 2), fmt(r.avg_in, 2), r.compression ? fmt(r.compression->cr, 1) : "-"});
  }
  std::vector<std::size_t> w(head.size());
  for (std::size_t c = 0; c < head.size(); ++c) {
    w[c] = head[c].size();
    for (const auto& row : rows) w[c] = std::max(w[c], row[c].size());
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) out += "  ";
      out += pad(cells[c], w[c], c < 2);
    }
    return out + "\n";
  };
  std::string out = line(head);
  for (const auto& row : rows) out += line(row);
  if (reports.size() > 1) {
    const auto m = macro_average(reports);
    out += "macro: Acc " + fmt(m.accuracy, 2) + "  AvgOut " + fmt(m.avg_out, 2) + "  OTC(macroAcc/macroOut) " +
           fmt(m.otc_of_means, 2) + "  OTC(mean of OTCs) " + fmt(m.mean_of_otcs, 2) + "\n";
  }
  return out;
}

std::string records_csv(const EvalReport& r) {
  auto quote = [](const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
      if (c == '"') out += '"';
      out += c;
    }
    return out + "\"";
  };
  std::string out = "sample_id,prompt_len,output_len,extracted,gold,correct,overflow\n";
  for (const auto& x : r.records) {
    out += quote(x.sample_id) + "," + std::to_string(x.prompt_len) + "," + std::to_string(x.output_len) + "," +
           quote(x.extracted) + "," + quote(x.gold) + "," + (x.correct ? "1" : "0") + "," + (x.overflow ? "1" : "0") + "\n";
  }
  return out;
}

}  // namespace onelatent::eval
