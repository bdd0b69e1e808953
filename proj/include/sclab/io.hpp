#pragma once

// Text formats: dictionaries, network checkpoints, matrix CSV. Every file is
// written to a temporary sibling and renamed into place.

#include "sclab/networks.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace sclab {

namespace fs = std::filesystem;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void atomic_write(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    os << content;
    os.flush();
    if (!os) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

namespace detail {

/// Whitespace tokenizer that reports the file name on errors.
class Tokens {
 public:
  Tokens(std::string text, std::string source) : is_(std::move(text)), source_(std::move(source)) {}

  std::string word() {
    std::string w;
    if (!(is_ >> w)) fail("unexpected end of file");
    return w;
  }

  void expect(const std::string& want) {
    const std::string got = word();
    if (got != want) fail("expected '" + want + "', found '" + got + "'");
  }

  double number() {
    const std::string w = word();
    try {
      std::size_t used = 0;
      const double v = std::stod(w, &used);
      if (used != w.size()) fail("bad number '" + w + "'");
      return v;
    } catch (const std::logic_error&) {
      fail("bad number '" + w + "'");
    }
  }

  long long integer() {
    const double v = number();
    if (v != std::floor(v)) fail("expected an integer");
    return static_cast<long long>(v);
  }

  Matrix matrix(Eigen::Index rows, Eigen::Index cols) {
    Matrix M(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) M(i, j) = number();
    return M;
  }

  bool at_end() {
    is_ >> std::ws;
    return is_.eof();
  }

  [[noreturn]] void fail(const std::string& what) const { throw FormatError(source_ + ": " + what); }

 private:
  std::istringstream is_;
  std::string source_;
};

inline void put_matrix(std::ostream& os, const Matrix& M) {
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) os << (j ? " " : "") << M(i, j);
    os << '\n';
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dictionary

inline std::string format_dictionary(const Dictionary& d) {
  std::ostringstream os;
  os.precision(17);
  os << "sclab-dictionary 1\n";
  os << "kind " << to_string(d.kind) << "\nseed " << d.seed << "\nn " << d.n() << "\nm " << d.m() << '\n';
  os << "zeta " << d.zeta.size();
  for (double z : d.zeta) os << ' ' << z;
  os << "\nD\n";
  detail::put_matrix(os, d.D);
  return os.str();
}

inline std::shared_ptr<const Dictionary> parse_dictionary(const std::string& text, const std::string& source = "dictionary") {
  detail::Tokens t(text, source);
  t.expect("sclab-dictionary");
  if (t.integer() != 1) t.fail("unsupported dictionary version");
  t.expect("kind");
  DictKind kind;
  try {
    kind = dict_kind_from_string(t.word());
  } catch (const std::invalid_argument& e) {
    t.fail(e.what());
  }
  t.expect("seed");
  const std::string seed_word = t.word();
  const std::uint64_t seed = std::stoull(seed_word);
  t.expect("n");
  const auto n = t.integer();
  t.expect("m");
  const auto m = t.integer();
  if (n < 1 || m < 1) t.fail("bad dimensions");
  t.expect("zeta");
  const auto nz = t.integer();
  std::vector<double> zeta;
  for (long long i = 0; i < nz; ++i) zeta.push_back(t.number());
  t.expect("D");
  Matrix D = t.matrix(n, m);
  if (!t.at_end()) t.fail("trailing content");
  return make_dictionary(std::move(D), kind, seed, std::move(zeta));
}

inline void save_dictionary(const fs::path& path, const Dictionary& d) { atomic_write(path, format_dictionary(d)); }

inline std::shared_ptr<const Dictionary> load_dictionary(const fs::path& path) {
  return parse_dictionary(read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Checkpoints: header (kind, K, m, n, mu) then every tensor in layer order.

inline std::string format_checkpoint(const NetworkParams& params, Eigen::Index m, Eigen::Index n) {
  std::ostringstream os;
  os.precision(17);
  const auto* fac = std::get_if<FacnetParams>(&params);
  os << "sclab-checkpoint 1\n";
  os << "kind " << to_string(kind_of(params)) << "\nK " << depth(params) << "\nm " << m << "\nn " << n << "\nmu "
     << (fac ? fac->mu : 0.0) << '\n';
  NetworkParams copy = params;
  std::visit(
      [&](auto& p) {
        using T = std::decay_t<decltype(p)>;
        auto put = [&](const std::string& name, const Matrix& M) {
          os << "tensor " << name << ' ' << M.rows() << ' ' << M.cols() << '\n';
          detail::put_matrix(os, M);
        };
        if constexpr (std::is_same_v<T, LinearParams>) {
          put("A0", p.A0);
        } else {
          for (std::size_t k = 0; k < p.layers.size(); ++k) {
            const std::string pre = "layer" + std::to_string(k + 1) + ".";
            const auto& l = p.layers[k];
            if constexpr (std::is_same_v<T, ListaParams>) {
              put(pre + "W_g", l.W_g);
              put(pre + "W_e", l.W_e);
              put(pre + "theta", l.theta);
            } else if constexpr (std::is_same_v<T, LfistaParams>) {
              put(pre + "W_g", l.W_g);
              put(pre + "W_m", l.W_m);
              put(pre + "W_e", l.W_e);
              put(pre + "theta", l.theta);
            } else {
              put(pre + "A", l.A);
              put(pre + "S", l.S);
            }
          }
        }
      },
      copy);
  return os.str();
}

struct Checkpoint {
  NetworkParams params;
  Eigen::Index m = 0;
  Eigen::Index n = 0;
};

inline Checkpoint parse_checkpoint(const std::string& text, const std::string& source = "checkpoint") {
  detail::Tokens t(text, source);
  t.expect("sclab-checkpoint");
  if (t.integer() != 1) t.fail("unsupported checkpoint version");
  t.expect("kind");
  NetKind kind;
  try {
    kind = net_kind_from_string(t.word());
  } catch (const std::invalid_argument& e) {
    t.fail(e.what());
  }
  t.expect("K");
  const auto K = t.integer();
  t.expect("m");
  const auto m = t.integer();
  t.expect("n");
  const auto n = t.integer();
  t.expect("mu");
  const double mu = t.number();
  if (K < 1 || m < 1 || n < 1) t.fail("bad header");
  if (kind == NetKind::linear && K != 1) t.fail("linear checkpoint must have K = 1");

  // skeleton with the right shapes, filled tensor by tensor
  Checkpoint out{LinearParams{Matrix::Zero(m, n)}, m, n};
  const Matrix Zmm = Matrix::Zero(m, m), Zmn = Matrix::Zero(m, n);
  const Vector zm = Vector::Zero(m);
  switch (kind) {
    case NetKind::lista: out.params = ListaParams{std::vector<ListaLayer>(K, ListaLayer{Zmm, Zmn, zm})}; break;
    case NetKind::lfista:
      out.params = LfistaParams{std::vector<LfistaLayer>(K, LfistaLayer{Zmm, Zmm, Zmn, zm})};
      break;
    case NetKind::facnet: out.params = FacnetParams{std::vector<FacnetLayer>(K, FacnetLayer{Zmm, zm}), mu}; break;
    case NetKind::linear: break;
  }
  for (auto& v : tensor_views(out.params)) {
    t.expect("tensor");
    const std::string name = t.word();
    if (name != v.name) t.fail("expected tensor " + v.name + ", found " + name);
    const auto rows = t.integer();
    const auto cols = t.integer();
    if (rows * cols != v.size) t.fail("tensor " + name + " has the wrong shape");
    // row-major text into column-major storage
    const Matrix M = t.matrix(rows, cols);
    Eigen::Map<Matrix>(v.data, rows, cols) = M;
  }
  if (!t.at_end()) t.fail("trailing content");
  return out;
}

inline void save_checkpoint(const fs::path& path, const NetworkParams& params, Eigen::Index m, Eigen::Index n) {
  atomic_write(path, format_checkpoint(params, m, n));
}

inline Checkpoint load_checkpoint(const fs::path& path) { return parse_checkpoint(read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Matrix CSV, one row per line

inline std::string format_csv(const Matrix& M, const std::vector<std::string>& header = {}) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  if (!header.empty()) os << '\n';
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) os << (j ? "," : "") << M(i, j);
    os << '\n';
  }
  return os.str();
}

/// Numeric CSV; a first line whose first cell is not a number is a header.
inline Matrix parse_csv(const std::string& text, const std::string& source = "csv") {
  std::istringstream is(text);
  std::string line;
  std::vector<std::vector<double>> rows;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1) {
      const std::string first = line.substr(0, line.find(','));
      char* end = nullptr;
      std::strtod(first.c_str(), &end);
      if (end == first.c_str()) continue;  // header
    }
    std::vector<double> row;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::logic_error&) {
        throw FormatError(source + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw FormatError(source + ":" + std::to_string(lineno) + ": ragged row");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(source + ": no data");
  Matrix M(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j) M(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return M;
}

inline void save_csv(const fs::path& path, const Matrix& M, const std::vector<std::string>& header = {}) {
  atomic_write(path, format_csv(M, header));
}

inline Matrix load_csv(const fs::path& path) { return parse_csv(read_file(path), path.string()); }

}  // namespace sclab
