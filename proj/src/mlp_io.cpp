#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "shiftlab/error.hpp"
#include "shiftlab/io.hpp"
#include "shiftlab/mlp.hpp"

// Textual checkpoint: magic line, config fields, then each layer's weights
// (row-major) and bias. Values use 17 significant digits so they round-trip.

namespace shiftlab {

namespace {

template <typename T>
T read_field(std::istream& in, std::string_view key) {
  std::string k;
  T v{};
  if (!(in >> k) || k != key) throw ValidationError("checkpoint: expected field '" + std::string(key) + "'");
  if (!(in >> v)) throw ValidationError("checkpoint: bad value for '" + std::string(key) + "'");
  return v;
}

double read_double(std::istream& in) {
  std::string tok;
  if (!(in >> tok)) throw ValidationError("checkpoint: truncated");
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size()) throw ValidationError("checkpoint: bad number '" + tok + "'");
  return v;
}

}  // namespace

void save_checkpoint(const MlpModel& model, std::ostream& out) {
  const auto& c = model.config();
  out << kMlpMagic << '\n'
      << "hidden_layers " << c.hidden_layers << '\n'
      << "width " << c.width << '\n'
      << "activation " << to_string(c.activation) << '\n'
      << "dropout " << format_double(c.dropout) << '\n'
      << "weight_decay " << format_double(c.weight_decay) << '\n'
      << "learning_rate " << format_double(c.learning_rate) << '\n'
      << "input_dim " << c.input_dim << '\n'
      << "output_dim " << c.output_dim << '\n'
      << "layers " << model.layers().size() << '\n';
  for (const auto& l : model.layers()) {
    out << "layer " << l.weight.rows() << ' ' << l.weight.cols() << '\n';
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index col = 0; col < l.weight.cols(); ++col) {
        if (col) out << ' ';
        out << format_double(l.weight(r, col));
      }
      out << '\n';
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) {
      if (r) out << ' ';
      out << format_double(l.bias(r));
    }
    out << '\n';
  }
  out << "end\n";
}

MlpModel load_checkpoint(std::istream& in) {
  std::string magic;
  if (!(in >> magic) || magic != kMlpMagic) throw ValidationError("checkpoint: missing SHIFTLAB-MLP-v1 header");
  MlpConfig c;
  c.hidden_layers = read_field<int>(in, "hidden_layers");
  c.width = read_field<int>(in, "width");
  c.activation = parse_activation(read_field<std::string>(in, "activation"));
  std::string key;
  in >> key;
  if (key != "dropout") throw ValidationError("checkpoint: expected field 'dropout'");
  c.dropout = read_double(in);
  in >> key;
  if (key != "weight_decay") throw ValidationError("checkpoint: expected field 'weight_decay'");
  c.weight_decay = read_double(in);
  in >> key;
  if (key != "learning_rate") throw ValidationError("checkpoint: expected field 'learning_rate'");
  c.learning_rate = read_double(in);
  c.input_dim = read_field<int>(in, "input_dim");
  c.output_dim = read_field<int>(in, "output_dim");
  const auto nlayers = read_field<std::size_t>(in, "layers");
  std::vector<DenseLayer> layers(nlayers);
  for (auto& l : layers) {
    std::string tag;
    Eigen::Index rows = 0, cols = 0;
    if (!(in >> tag >> rows >> cols) || tag != "layer" || rows < 0 || cols < 0) {
      throw ValidationError("checkpoint: bad layer header");
    }
    l.weight.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index col = 0; col < cols; ++col) l.weight(r, col) = read_double(in);
    }
    l.bias.resize(rows);
    for (Eigen::Index r = 0; r < rows; ++r) l.bias(r) = read_double(in);
  }
  std::string end;
  if (!(in >> end) || end != "end") throw ValidationError("checkpoint: missing end marker");
  return MlpModel(c, std::move(layers));
}

void save_checkpoint(const MlpModel& model, const std::string& path) {
  std::ostringstream out;
  save_checkpoint(model, out);
  write_text_file(path, out.str());
}

MlpModel load_checkpoint(const std::string& path) {
  std::istringstream in(read_text_file(path));
  return load_checkpoint(in);
}

}  // namespace shiftlab
