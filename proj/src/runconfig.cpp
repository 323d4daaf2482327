#include "qulab/runconfig.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "qulab/error.hpp"

namespace qulab {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

const std::set<std::string>& known_fixed_keys() {
  static const std::set<std::string> keys = {
      "run.seed",
      "corpus.n_entities",
      "corpus.relations_per_entity",
      "corpus.forget_frac",
      "corpus.holdout_frac",
      "model.d_model",
      "model.n_layers",
      "model.n_heads",
      "model.d_ff",
      "model.max_seq_len",
      "train.lr",
      "train.epochs",
      "train.batch_size",
      "train.weight_decay",
      "train.include_qa",
      "quant.bits",
      "quant.granularity",
      "quant.group_size",
      "eval.prefix_len",
      "eval.min_k",
      "eval.max_answer_tokens",
  };
  return keys;
}

const std::set<std::string>& known_cell_keys() {
  static const std::set<std::string> keys = {
      "alpha", "beta", "lr", "epochs", "batch_size", "sure_percentile",
  };
  return keys;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

ConfigFile ConfigFile::parse_text(const std::string& text) {
  ConfigFile cfg;
  std::istringstream is(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section");
      }
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) {
        throw ConfigError("config line " + std::to_string(line_no) + ": empty section name");
      }
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    }
    if (section.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": key outside any section");
    }
    cfg.entries_[section + "." + key] = value;
  }
  return cfg;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str());
}

bool ConfigFile::has(const std::string& key) const { return entries_.count(key) > 0; }

std::string ConfigFile::get_string(const std::string& key, const std::string& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' is not a number: " + it->second);
  }
}

int ConfigFile::get_int(const std::string& key, int fallback) const {
  const double v = get_double(key, static_cast<double>(fallback));
  const int i = static_cast<int>(v);
  if (static_cast<double>(i) != v) throw ConfigError("config: '" + key + "' must be an integer");
  return i;
}

uint64_t ConfigFile::get_u64(const std::string& key, uint64_t fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    size_t used = 0;
    const uint64_t v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' is not an unsigned integer: " + it->second);
  }
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ConfigError("config: '" + key + "' must be true or false");
}

std::vector<std::string> ConfigFile::sections() const {
  std::vector<std::string> out;
  std::string last;
  for (const auto& [key, value] : entries_) {
    const std::string sec = key.substr(0, key.rfind('.'));
    if (sec != last) {
      out.push_back(sec);
      last = sec;
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

RunConfig RunConfig::defaults() {
  RunConfig rc;
  rc.model.vocab_size = 0;  // set once the vocabulary exists
  rc.model.d_model = 128;
  rc.model.n_layers = 2;
  rc.model.n_heads = 4;
  rc.model.d_ff = 256;
  rc.model.max_seq_len = 64;

  rc.train.lr = 1e-3f;
  rc.train.epochs = 10;
  rc.train.batch_size = 8;

  // Grid: the benchmark-rate runs plus one SURE cell at the large rate.
  UnlearnCell ga_gdr;
  ga_gdr.name = "GA_GDR";
  ga_gdr.config = parse_unlearn_label("GA_GDR");
  ga_gdr.config.alpha = 5.0f;
  ga_gdr.config.lr = 1e-5f;
  ga_gdr.config.epochs = 100;
  ga_gdr.config.batch_size = 4;

  UnlearnCell ga_klr;
  ga_klr.name = "GA_KLR";
  ga_klr.config = parse_unlearn_label("GA_KLR");
  ga_klr.config.alpha = 2.0f;
  ga_klr.config.lr = 1e-5f;
  ga_klr.config.epochs = 60;
  ga_klr.config.batch_size = 4;

  UnlearnCell sure;
  sure.name = "GA_GDR+SURE";
  sure.config = parse_unlearn_label("GA_GDR+SURE");
  sure.config.alpha = 10.0f;
  sure.config.lr = 1e-4f;
  sure.config.epochs = 220;
  sure.config.batch_size = 4;
  sure.config.sure_percentile = 90.0;

  rc.grid = {ga_gdr, ga_klr, sure};
  return rc;
}

RunConfig RunConfig::from_config(const ConfigFile& file) {
  for (const auto& [key, value] : file.entries()) {
    if (key.rfind("unlearn.", 0) == 0) {
      const size_t last_dot = key.rfind('.');
      const std::string field = key.substr(last_dot + 1);
      if (!known_cell_keys().count(field)) {
        throw ConfigError("config: unknown unlearn key '" + key + "'");
      }
      continue;
    }
    if (!known_fixed_keys().count(key)) throw ConfigError("config: unknown key '" + key + "'");
  }

  RunConfig rc = defaults();
  rc.seed = file.get_u64("run.seed", rc.seed);
  rc.corpus.n_entities = file.get_int("corpus.n_entities", rc.corpus.n_entities);
  rc.corpus.relations_per_entity =
      file.get_int("corpus.relations_per_entity", rc.corpus.relations_per_entity);
  rc.corpus.forget_frac = file.get_double("corpus.forget_frac", rc.corpus.forget_frac);
  rc.corpus.holdout_frac = file.get_double("corpus.holdout_frac", rc.corpus.holdout_frac);
  rc.model.d_model = file.get_int("model.d_model", rc.model.d_model);
  rc.model.n_layers = file.get_int("model.n_layers", rc.model.n_layers);
  rc.model.n_heads = file.get_int("model.n_heads", rc.model.n_heads);
  rc.model.d_ff = file.get_int("model.d_ff", rc.model.d_ff);
  rc.model.max_seq_len = file.get_int("model.max_seq_len", rc.model.max_seq_len);
  rc.train.lr = static_cast<float>(file.get_double("train.lr", rc.train.lr));
  rc.train.epochs = file.get_int("train.epochs", rc.train.epochs);
  rc.train.batch_size = file.get_int("train.batch_size", rc.train.batch_size);
  rc.train.weight_decay =
      static_cast<float>(file.get_double("train.weight_decay", rc.train.weight_decay));
  rc.train.include_qa = file.get_bool("train.include_qa", rc.train.include_qa);
  rc.eval.prefix_len = file.get_int("eval.prefix_len", rc.eval.prefix_len);
  rc.eval.min_k = file.get_double("eval.min_k", rc.eval.min_k);
  rc.eval.max_answer_tokens = file.get_int("eval.max_answer_tokens", rc.eval.max_answer_tokens);

  if (file.has("quant.bits")) {
    rc.quant_bits.clear();
    for (const auto& item : split_list(file.get_string("quant.bits", ""))) {
      rc.quant_bits.push_back(std::stoi(item));
    }
    if (rc.quant_bits.empty()) throw ConfigError("config: quant.bits must list at least one width");
  }
  const std::string gran = file.get_string("quant.granularity", "per_tensor");
  if (gran == "per_tensor") {
    rc.quant_granularity = QuantGranularity::PerTensor;
  } else if (gran == "per_group") {
    rc.quant_granularity = QuantGranularity::PerGroup;
  } else {
    throw ConfigError("config: quant.granularity must be per_tensor or per_group");
  }
  rc.quant_group_size = file.get_int("quant.group_size", rc.quant_group_size);

  // Grid cells override the defaults entirely when any are present.
  std::vector<UnlearnCell> cells;
  for (const auto& section : file.sections()) {
    if (section.rfind("unlearn.", 0) != 0) continue;
    const std::string label = section.substr(std::string("unlearn.").size());
    UnlearnCell cell;
    cell.name = label;
    cell.config = parse_unlearn_label(label);
    cell.config.alpha = static_cast<float>(file.get_double(section + ".alpha", 1.0));
    cell.config.beta = static_cast<float>(file.get_double(section + ".beta", 0.1));
    cell.config.lr = static_cast<float>(file.get_double(section + ".lr", 1e-5));
    cell.config.epochs = file.get_int(section + ".epochs", 100);
    cell.config.batch_size = file.get_int(section + ".batch_size", 4);
    cell.config.sure_percentile = file.get_double(section + ".sure_percentile", 90.0);
    cell.config.validate();
    cells.push_back(std::move(cell));
  }
  if (!cells.empty()) rc.grid = std::move(cells);

  // Duplicate cells would make run-directory paths collide.
  std::set<std::string> names;
  for (const auto& cell : rc.grid) {
    if (!names.insert(cell.name).second) {
      throw ConfigError("config: duplicate unlearn cell '" + cell.name + "'");
    }
  }
  return rc;
}

RunConfig RunConfig::from_file(const std::string& path) {
  return from_config(ConfigFile::parse_file(path));
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "[run]\n";
  os << "seed = " << seed << "\n\n";
  os << "[corpus]\n";
  os << "n_entities = " << corpus.n_entities << "\n";
  os << "relations_per_entity = " << corpus.relations_per_entity << "\n";
  os << "forget_frac = " << fmt_double(corpus.forget_frac) << "\n";
  os << "holdout_frac = " << fmt_double(corpus.holdout_frac) << "\n\n";
  os << "[model]\n";
  os << "d_model = " << model.d_model << "\n";
  os << "n_layers = " << model.n_layers << "\n";
  os << "n_heads = " << model.n_heads << "\n";
  os << "d_ff = " << model.d_ff << "\n";
  os << "max_seq_len = " << model.max_seq_len << "\n\n";
  os << "[train]\n";
  os << "lr = " << fmt_double(train.lr) << "\n";
  os << "epochs = " << train.epochs << "\n";
  os << "batch_size = " << train.batch_size << "\n";
  os << "weight_decay = " << fmt_double(train.weight_decay) << "\n";
  os << "include_qa = " << (train.include_qa ? "true" : "false") << "\n\n";
  os << "[quant]\n";
  os << "bits = ";
  for (size_t i = 0; i < quant_bits.size(); ++i) {
    if (i) os << ",";
    os << quant_bits[i];
  }
  os << "\n";
  os << "granularity = "
     << (quant_granularity == QuantGranularity::PerTensor ? "per_tensor" : "per_group") << "\n";
  os << "group_size = " << quant_group_size << "\n\n";
  os << "[eval]\n";
  os << "prefix_len = " << eval.prefix_len << "\n";
  os << "min_k = " << fmt_double(eval.min_k) << "\n";
  os << "max_answer_tokens = " << eval.max_answer_tokens << "\n";
  // Canonical cell order is alphabetical, matching config-file parsing.
  std::vector<const UnlearnCell*> sorted;
  for (const auto& cell : grid) sorted.push_back(&cell);
  std::sort(sorted.begin(), sorted.end(),
            [](const UnlearnCell* a, const UnlearnCell* b) { return a->name < b->name; });
  for (const UnlearnCell* cell : sorted) {
    os << "\n[unlearn." << cell->name << "]\n";
    os << "alpha = " << fmt_double(cell->config.alpha) << "\n";
    os << "beta = " << fmt_double(cell->config.beta) << "\n";
    os << "lr = " << fmt_double(cell->config.lr) << "\n";
    os << "epochs = " << cell->config.epochs << "\n";
    os << "batch_size = " << cell->config.batch_size << "\n";
    os << "sure_percentile = " << fmt_double(cell->config.sure_percentile) << "\n";
  }
  return os.str();
}

QuantSpec RunConfig::quant_spec(int bits) const {
  QuantSpec spec;
  spec.bits = bits;
  spec.granularity = quant_granularity;
  spec.group_size = quant_group_size;
  spec.validate();
  return spec;
}

}  // namespace qulab
