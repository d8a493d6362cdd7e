#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mctsnmt/model.hpp"

namespace mctsnmt {

namespace {

constexpr const char* kMagic = "mctsnmt-checkpoint";

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  std::string line() {
    std::string s;
    if (!std::getline(in_, s)) corrupt("unexpected end of file");
    ++line_no_;
    return s;
  }

  // Reads "key value" and returns value.
  std::string field(const std::string& key) {
    const std::string s = line();
    const auto sp = s.find(' ');
    if (sp == std::string::npos || s.substr(0, sp) != key) {
      corrupt("expected '" + key + "'");
    }
    return s.substr(sp + 1);
  }

  std::size_t size_field(const std::string& key) {
    const std::string v = field(key);
    char* end = nullptr;
    const unsigned long long n = std::strtoull(v.c_str(), &end, 10);
    if (v.empty() || *end != '\0') corrupt("bad integer for '" + key + "'");
    return static_cast<std::size_t>(n);
  }

  std::vector<double> numbers(std::size_t count) {
    const std::string s = line();
    std::vector<double> out;
    out.reserve(count);
    const char* p = s.c_str();
    for (std::size_t i = 0; i < count; ++i) {
      char* end = nullptr;
      const double x = std::strtod(p, &end);
      if (end == p) corrupt("expected " + std::to_string(count) + " numbers");
      out.push_back(x);
      p = end;
    }
    while (*p == ' ') ++p;
    if (*p != '\0') corrupt("trailing data");
    return out;
  }

  [[noreturn]] void corrupt(const std::string& what) const {
    throw Error("corrupt checkpoint " + path_ + " (line " +
                std::to_string(line_no_) + "): " + what);
  }

 private:
  std::istream& in_;
  std::string path_;
  std::size_t line_no_ = 0;
};

void write_numbers(std::ostream& out, std::span<const double> xs) {
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out << ' ';
    out << format_double(xs[i]);
  }
  out << '\n';
}

}  // namespace

void save_model(const Model& model, const std::filesystem::path& path) {
  std::ostringstream out;
  out << kMagic << '\n';
  out << "format_version " << kCheckpointVersion << '\n';
  out << "model_kind " << to_string(model.kind()) << '\n';
  out << "vocab_size " << model.vocab_size() << '\n';
  out << "vocab_fingerprint "
      << (model.vocab_fingerprint().empty() ? "-" : model.vocab_fingerprint())
      << '\n';
  if (const auto* t = dynamic_cast<const TabularModel*>(&model)) {
    const std::size_t v = t->vocab_size();
    const std::size_t f = t->num_features();
    const auto theta = t->parameters();
    out << "reorder " << to_string(t->reorder()) << '\n';
    out << "logits " << f << ' ' << v << '\n';
    for (std::size_t r = 0; r < f; ++r) write_numbers(out, theta.subspan(r * v, v));
    out << "values " << f << '\n';
    write_numbers(out, theta.subspan(f * v, f));
  } else if (const auto* o = dynamic_cast<const OracleModel*>(&model)) {
    const SyntheticTaskSpec& s = o->spec();
    out << "src_vocab_size " << s.src_vocab_size << '\n';
    out << "min_len " << s.min_len << '\n';
    out << "max_len " << s.max_len << '\n';
    out << "mapping_seed " << s.mapping_seed << '\n';
    out << "reorder " << to_string(s.reorder) << '\n';
  } else if (const auto* rm = dynamic_cast<const RemoteModel*>(&model)) {
    out << "endpoint " << rm->endpoint() << '\n';
  } else {
    throw Error("save_model: unsupported model type");
  }
  out << "end\n";

  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error("cannot write " + path.string());
  file << out.str();
  if (!file) throw Error("write failed: " + path.string());
}

std::unique_ptr<Model> load_model(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error("cannot read checkpoint " + path.string());
  Reader in(file, path.string());

  if (in.line() != kMagic) in.corrupt("not a checkpoint");
  const std::string version = in.field("format_version");
  if (version != std::to_string(kCheckpointVersion)) {
    throw Error("unsupported checkpoint version " + version + " in " +
                path.string() + " (expected " +
                std::to_string(kCheckpointVersion) + ")");
  }
  const std::string kind = in.field("model_kind");
  const std::size_t vocab_size = in.size_field("vocab_size");
  std::string fingerprint = in.field("vocab_fingerprint");
  if (fingerprint == "-") fingerprint.clear();

  std::unique_ptr<Model> model;
  try {
    if (kind == "tabular") {
      const Reorder reorder = parse_reorder(in.field("reorder"));
      auto t = std::make_unique<TabularModel>(vocab_size, reorder);
      const std::string shape = in.field("logits");
      if (shape != std::to_string(t->num_features()) + " " +
                       std::to_string(vocab_size)) {
        in.corrupt("logit table shape " + shape);
      }
      auto theta = t->parameters();
      const std::size_t f = t->num_features();
      for (std::size_t r = 0; r < f; ++r) {
        const auto row = in.numbers(vocab_size);
        std::copy(row.begin(), row.end(), theta.begin() + static_cast<std::ptrdiff_t>(r * vocab_size));
      }
      if (in.size_field("values") != f) in.corrupt("value table size");
      const auto values = in.numbers(f);
      std::copy(values.begin(), values.end(),
                theta.begin() + static_cast<std::ptrdiff_t>(f * vocab_size));
      model = std::move(t);
    } else if (kind == "oracle") {
      SyntheticTaskSpec s;
      s.src_vocab_size = static_cast<int>(in.size_field("src_vocab_size"));
      s.min_len = static_cast<int>(in.size_field("min_len"));
      s.max_len = static_cast<int>(in.size_field("max_len"));
      s.mapping_seed = in.size_field("mapping_seed");
      s.reorder = parse_reorder(in.field("reorder"));
      auto o = std::make_unique<OracleModel>(s);
      if (o->vocab_size() != vocab_size) in.corrupt("oracle vocab size");
      model = std::move(o);
    } else if (kind == "remote") {
      const std::string endpoint = in.field("endpoint");
      model = std::make_unique<RemoteModel>(endpoint, vocab_size, fingerprint);
    } else {
      in.corrupt("unknown model kind '" + kind + "'");
    }
  } catch (const Error& e) {
    const std::string msg = e.what();
    if (msg.rfind("corrupt checkpoint", 0) == 0 ||
        msg.rfind("remote model", 0) == 0) {
      throw;
    }
    in.corrupt(msg);
  }
  if (in.line() != "end") in.corrupt("missing end marker");
  model->set_vocab_fingerprint(fingerprint);
  return model;
}

}  // namespace mctsnmt
