#include "nrsfm/io.hpp"

#include <zlib.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace nrsfm::io {

const char* to_string(IoErrorKind kind) {
  switch (kind) {
    case IoErrorKind::Open: return "open error";
    case IoErrorKind::Parse: return "parse error";
    case IoErrorKind::Checksum: return "checksum mismatch";
    case IoErrorKind::Version: return "unsupported version";
    case IoErrorKind::Truncated: return "truncated file";
    case IoErrorKind::Schema: return "schema error";
  }
  return "io error";
}

namespace fs = std::filesystem;

namespace {

constexpr char kModelMagic[8] = {'N', 'R', 'S', 'F', 'M', 'M', 'O', 'D'};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::Open, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void append_number(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

void append_number(std::string& out, std::uint64_t v) {
  char buf[24];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

template <typename T>
T parse_number(std::string_view token, const std::string& where) {
  T value{};
  const auto res = std::from_chars(token.data(), token.data() + token.size(), value);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size())
    throw IoError(IoErrorKind::Parse, where + ": cannot parse '" + std::string(token) + "'");
  return value;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

// Text tables: "# <title>" line, "key value" header lines, a column-name line
// starting with the first column name, then numeric rows.
struct TextTable {
  std::map<std::string, std::string> header;
  std::vector<std::vector<std::string_view>> rows;
  std::string storage;
};

TextTable parse_table(const fs::path& path, const std::string& title, const std::string& first_column) {
  TextTable table;
  table.storage = read_file(path);
  std::string_view text(table.storage);
  bool titled = false, in_rows = false;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!titled) {
      if (line != "# " + title)
        throw IoError(IoErrorKind::Parse, path.string() + ": expected header '# " + title + "'");
      titled = true;
      continue;
    }
    auto tokens = split(line);
    if (tokens.empty()) continue;
    if (!in_rows) {
      if (tokens[0] == first_column) {
        in_rows = true;
        continue;
      }
      if (tokens.size() != 2)
        throw IoError(IoErrorKind::Parse, path.string() + ":" + std::to_string(line_no) + ": malformed header line");
      table.header[std::string(tokens[0])] = std::string(tokens[1]);
      continue;
    }
    table.rows.push_back(std::move(tokens));
  }
  if (!titled) throw IoError(IoErrorKind::Truncated, path.string() + " is empty");
  const auto v = table.header.find("version");
  if (v == table.header.end()) throw IoError(IoErrorKind::Parse, path.string() + ": missing version");
  const auto version = parse_number<std::uint32_t>(v->second, path.string());
  if (version > kLandmarkVersion)
    throw IoError(IoErrorKind::Version, path.string() + " has format version " + std::to_string(version) +
                                            ", this build reads up to " + std::to_string(kLandmarkVersion));
  if (!in_rows) throw IoError(IoErrorKind::Truncated, path.string() + ": no data section");
  return table;
}

std::uint64_t header_uint(const TextTable& t, const std::string& key, const fs::path& path) {
  const auto it = t.header.find(key);
  if (it == t.header.end()) throw IoError(IoErrorKind::Parse, path.string() + ": missing header '" + key + "'");
  return parse_number<std::uint64_t>(it->second, path.string());
}

// Frame-indexed rows of `width` numbers after the frame id.
std::vector<Eigen::VectorXd> parse_frame_rows(const TextTable& t, std::size_t N, std::size_t width,
                                              const fs::path& path) {
  if (t.rows.size() < N)
    throw IoError(IoErrorKind::Truncated, path.string() + ": expected " + std::to_string(N) + " rows, found " +
                                              std::to_string(t.rows.size()));
  if (t.rows.size() > N) throw IoError(IoErrorKind::Schema, path.string() + ": more rows than declared");
  std::vector<Eigen::VectorXd> out(N);
  std::vector<bool> seen(N, false);
  for (const auto& row : t.rows) {
    if (row.size() != width + 1)
      throw IoError(IoErrorKind::Schema, path.string() + ": row has " + std::to_string(row.size()) +
                                             " fields, expected " + std::to_string(width + 1));
    const auto id = parse_number<std::uint64_t>(row[0], path.string());
    if (id >= N || seen[id]) throw IoError(IoErrorKind::Schema, path.string() + ": frame ids must be dense from 0");
    seen[id] = true;
    Eigen::VectorXd v(static_cast<Index>(width));
    for (std::size_t j = 0; j < width; ++j) v[static_cast<Index>(j)] = parse_number<double>(row[j + 1], path.string());
    out[id] = std::move(v);
  }
  return out;
}

// Little-endian byte writer/reader for the model payload.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    u64(bits);
  }
  template <typename Derived>
  void matrix(const Eigen::MatrixBase<Derived>& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) f64(m(i, j));
  }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  Eigen::MatrixXd matrix(const char* what) {
    const std::uint64_t rows = u64();
    const std::uint64_t cols = u64();
    if (rows > (1u << 24) || cols > (1u << 24) || rows * cols * 8 > data_.size() - pos_)
      throw IoError(IoErrorKind::Schema, std::string("declared shape of ") + what + " exceeds the payload");
    Eigen::MatrixXd m(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = f64();
    return m;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw IoError(IoErrorKind::Schema, "model payload ends early");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(std::string_view bytes) {
  return static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()),
                                          static_cast<uInt>(bytes.size())));
}

}  // namespace

void write_text_atomic(const fs::path& path, const std::string& contents) {
  std::error_code ec;
  if (path.has_parent_path() && !path.parent_path().empty()) {
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError(IoErrorKind::Open, "cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(IoErrorKind::Open, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError(IoErrorKind::Open, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError(IoErrorKind::Open, "cannot replace " + path.string());
  }
}

void write_landmarks(const fs::path& path, const LandmarkFile& file) {
  std::string s = "# nrsfm landmarks\nversion 1\nL ";
  append_number(s, static_cast<std::uint64_t>(file.L));
  s += "\nN ";
  append_number(s, static_cast<std::uint64_t>(file.N()));
  s += file.normalized ? "\nnormalized 1\nseed " : "\nnormalized 0\nseed ";
  append_number(s, file.seed);
  s += "\nframe point x y\n";
  for (Index n = 0; n < file.N(); ++n) {
    const Shape2D& X = file.shapes[static_cast<std::size_t>(n)];
    if (X.cols() != file.L) throw DimensionError("write_landmarks: frame " + std::to_string(n) + " has wrong L");
    if (file.normalized && (X.minCoeff() < 0.0 || X.maxCoeff() > 1.0))
      throw InvalidArgument("write_landmarks: frame " + std::to_string(n) +
                            " leaves [0, 1] but the file is flagged normalized");
    for (Index j = 0; j < file.L; ++j) {
      append_number(s, static_cast<std::uint64_t>(n));
      s += ' ';
      append_number(s, static_cast<std::uint64_t>(j));
      s += ' ';
      append_number(s, X(0, j));
      s += ' ';
      append_number(s, X(1, j));
      s += '\n';
    }
  }
  write_text_atomic(path, s);
}

LandmarkFile read_landmarks(const fs::path& path) {
  const TextTable t = parse_table(path, "nrsfm landmarks", "frame");
  LandmarkFile file;
  file.L = static_cast<Index>(header_uint(t, "L", path));
  const std::size_t N = header_uint(t, "N", path);
  file.normalized = header_uint(t, "normalized", path) != 0;
  file.seed = header_uint(t, "seed", path);
  const std::size_t expected = N * static_cast<std::size_t>(file.L);
  if (t.rows.size() < expected)
    throw IoError(IoErrorKind::Truncated, path.string() + ": expected " + std::to_string(expected) +
                                              " landmark rows, found " + std::to_string(t.rows.size()));
  if (t.rows.size() > expected) throw IoError(IoErrorKind::Schema, path.string() + ": more rows than declared");
  file.shapes.assign(N, Shape2D::Constant(2, file.L, std::numeric_limits<double>::quiet_NaN()));
  for (const auto& row : t.rows) {
    if (row.size() != 4) throw IoError(IoErrorKind::Schema, path.string() + ": landmark rows need 4 fields");
    const auto f = parse_number<std::uint64_t>(row[0], path.string());
    const auto p = parse_number<std::uint64_t>(row[1], path.string());
    if (f >= N || p >= static_cast<std::uint64_t>(file.L))
      throw IoError(IoErrorKind::Schema, path.string() + ": frame/point id out of range");
    Shape2D& X = file.shapes[f];
    if (!std::isnan(X(0, static_cast<Index>(p))))
      throw IoError(IoErrorKind::Schema, path.string() + ": duplicate landmark " + std::to_string(f) + "/" +
                                             std::to_string(p));
    const double x = parse_number<double>(row[2], path.string());
    const double y = parse_number<double>(row[3], path.string());
    if (file.normalized && (x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0))
      throw IoError(IoErrorKind::Schema, path.string() + ": coordinate outside [0, 1] in a normalized file");
    X(0, static_cast<Index>(p)) = x;
    X(1, static_cast<Index>(p)) = y;
  }
  return file;
}

void write_truth(const fs::path& path, const TruthSidecar& truth) {
  if (truth.q_true.size() != truth.nuisance.size())
    throw DimensionError("write_truth: q_true and nuisance counts differ");
  const std::size_t N = truth.q_true.size();
  const Index q_dim = N ? truth.q_true.front().size() : 0;
  const Index n_dim = N ? truth.nuisance.front().size() : 0;
  std::string s = "# nrsfm truth\nversion 1\nN ";
  append_number(s, static_cast<std::uint64_t>(N));
  s += "\nq_dim ";
  append_number(s, static_cast<std::uint64_t>(q_dim));
  s += "\nnuisance_dim ";
  append_number(s, static_cast<std::uint64_t>(n_dim));
  s += "\nframe q... nuisance...\n";
  for (std::size_t n = 0; n < N; ++n) {
    if (truth.q_true[n].size() != q_dim || truth.nuisance[n].size() != n_dim)
      throw DimensionError("write_truth: inconsistent row widths");
    append_number(s, static_cast<std::uint64_t>(n));
    for (Index i = 0; i < q_dim; ++i) {
      s += ' ';
      append_number(s, truth.q_true[n][i]);
    }
    for (Index i = 0; i < n_dim; ++i) {
      s += ' ';
      append_number(s, truth.nuisance[n][i]);
    }
    s += '\n';
  }
  write_text_atomic(path, s);
}

TruthSidecar read_truth(const fs::path& path) {
  const TextTable t = parse_table(path, "nrsfm truth", "frame");
  const std::size_t N = header_uint(t, "N", path);
  const std::size_t q_dim = header_uint(t, "q_dim", path);
  const std::size_t n_dim = header_uint(t, "nuisance_dim", path);
  if (q_dim < static_cast<std::size_t>(layout::kFixed)) throw IoError(IoErrorKind::Schema, "q_dim below 8");
  const auto rows = parse_frame_rows(t, N, q_dim + n_dim, path);
  TruthSidecar truth;
  for (const auto& r : rows) {
    truth.q_true.emplace_back(Eigen::VectorXd(r.head(static_cast<Index>(q_dim))));
    truth.nuisance.emplace_back(r.tail(static_cast<Index>(n_dim)));
  }
  return truth;
}

void write_latents(const fs::path& path, const std::vector<Eigen::VectorXd>& latents) {
  const Index d = latents.empty() ? 0 : latents.front().size();
  std::string s = "# nrsfm latents\nversion 1\nN ";
  append_number(s, static_cast<std::uint64_t>(latents.size()));
  s += "\nd ";
  append_number(s, static_cast<std::uint64_t>(d));
  s += "\nframe w...\n";
  for (std::size_t n = 0; n < latents.size(); ++n) {
    if (latents[n].size() != d) throw DimensionError("write_latents: inconsistent latent dimension");
    append_number(s, static_cast<std::uint64_t>(n));
    for (Index i = 0; i < d; ++i) {
      s += ' ';
      append_number(s, latents[n][i]);
    }
    s += '\n';
  }
  write_text_atomic(path, s);
}

std::vector<Eigen::VectorXd> read_latents(const fs::path& path) {
  const TextTable t = parse_table(path, "nrsfm latents", "frame");
  return parse_frame_rows(t, header_uint(t, "N", path), header_uint(t, "d", path), path);
}

std::string serialize_model(const ModelFile& model) {
  model.basis.validate();
  ByteWriter p;
  p.u64(static_cast<std::uint64_t>(model.basis.L()));
  p.u64(static_cast<std::uint64_t>(model.basis.K()));
  p.matrix(model.basis.B0);
  p.matrix(model.basis.D);
  p.matrix(model.basis.b);
  p.u8(model.regressor ? 1 : 0);
  if (model.regressor) {
    const MlpRegressor& r = *model.regressor;
    r.validate();
    p.u64(r.layers.size());
    for (const auto& layer : r.layers) {
      p.matrix(layer.weight);
      p.matrix(layer.bias);
    }
    p.matrix(r.output_mean);
    p.matrix(r.output_scale);
  }
  const std::string& payload = p.bytes();

  ByteWriter out;
  std::string& bytes = out.bytes();
  bytes.append(kModelMagic, sizeof kModelMagic);
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((kModelVersion >> (8 * i)) & 0xff));
  out.u64(payload.size());
  bytes += payload;
  const std::uint32_t c = crc(payload);
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((c >> (8 * i)) & 0xff));
  return bytes;
}

ModelFile deserialize_model(const std::string& bytes) {
  constexpr std::size_t header = sizeof kModelMagic + 4 + 8;
  if (bytes.size() < sizeof kModelMagic) throw IoError(IoErrorKind::Truncated, "model file shorter than its header");
  if (std::memcmp(bytes.data(), kModelMagic, sizeof kModelMagic) != 0)
    throw IoError(IoErrorKind::Parse, "not a model file (bad magic)");
  if (bytes.size() < header) throw IoError(IoErrorKind::Truncated, "model file shorter than its header");
  std::uint32_t version = 0;
  for (int i = 0; i < 4; ++i)
    version |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[sizeof kModelMagic + i])) << (8 * i);
  if (version == 0 || version > kModelVersion)
    throw IoError(IoErrorKind::Version, "model format version " + std::to_string(version) +
                                            ", this build reads up to " + std::to_string(kModelVersion));
  ByteReader head(std::string_view(bytes).substr(sizeof kModelMagic + 4, 8));
  const std::uint64_t size = head.u64();
  if (bytes.size() - header < size + 4)
    throw IoError(IoErrorKind::Truncated, "model payload is " + std::to_string(bytes.size() - header) +
                                              " bytes, header declares " + std::to_string(size) + " plus checksum");
  if (bytes.size() - header > size + 4) throw IoError(IoErrorKind::Schema, "trailing bytes after model checksum");
  const std::string_view payload = std::string_view(bytes).substr(header, size);
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[header + size + i])) << (8 * i);
  if (stored != crc(payload)) throw IoError(IoErrorKind::Checksum, "model payload checksum does not match");

  ByteReader r(payload);
  ModelFile model;
  const auto L = static_cast<Index>(r.u64());
  const auto K = static_cast<Index>(r.u64());
  const Eigen::MatrixXd B0 = r.matrix("B0");
  const Eigen::MatrixXd D = r.matrix("D");
  const Eigen::MatrixXd b = r.matrix("b");
  if (B0.rows() != 3 || B0.cols() != L || D.rows() != 3 || D.cols() != K || b.rows() != K || b.cols() != L)
    throw IoError(IoErrorKind::Schema, "basis arrays do not match the declared K and L");
  model.basis.B0 = B0;
  model.basis.D = D;
  model.basis.b = b;
  if (r.u8()) {
    MlpRegressor reg;
    const std::uint64_t n_layers = r.u64();
    if (n_layers == 0 || n_layers > 1024) throw IoError(IoErrorKind::Schema, "implausible layer count");
    for (std::uint64_t l = 0; l < n_layers; ++l) {
      DenseLayer layer;
      layer.weight = r.matrix("weight");
      const Eigen::MatrixXd bias = r.matrix("bias");
      if (bias.cols() != 1) throw IoError(IoErrorKind::Schema, "bias must be a column");
      layer.bias = bias.col(0);
      reg.layers.push_back(std::move(layer));
    }
    const Eigen::MatrixXd mean = r.matrix("output mean");
    const Eigen::MatrixXd scale = r.matrix("output scale");
    if (mean.cols() != 1 || scale.cols() != 1) throw IoError(IoErrorKind::Schema, "normalization must be columns");
    reg.output_mean = mean.col(0);
    reg.output_scale = scale.col(0);
    try {
      reg.validate();
    } catch (const DimensionError& e) {
      throw IoError(IoErrorKind::Schema, e.what());
    }
    if (reg.output_dim() != layout::dimension(K))
      throw IoError(IoErrorKind::Schema, "regressor output does not match the basis K");
    model.regressor = std::move(reg);
  }
  if (!r.done()) throw IoError(IoErrorKind::Schema, "unread bytes in model payload");
  return model;
}

void write_model(const fs::path& path, const ModelFile& model) { write_text_atomic(path, serialize_model(model)); }

ModelFile read_model(const fs::path& path) { return deserialize_model(read_file(path)); }

void write_world_config(const fs::path& path, const WorldConfig& cfg) {
  std::string s = "# synthetic world\nlatent_dim = ";
  append_number(s, static_cast<std::uint64_t>(cfg.latent_dim));
  s += "\nK = ";
  append_number(s, static_cast<std::uint64_t>(cfg.K));
  s += "\nL = ";
  append_number(s, static_cast<std::uint64_t>(cfg.L));
  s += "\nsigma = ";
  append_number(s, cfg.sigma);
  s += "\nseed = ";
  append_number(s, cfg.seed);
  s += "\nnuisance_dim = ";
  append_number(s, static_cast<std::uint64_t>(cfg.nuisance_dim));
  s += "\nnonlinearity = ";
  append_number(s, cfg.nonlinearity);
  s += "\n";
  write_text_atomic(path, s);
}

WorldConfig read_world_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorKind::Open, "cannot open " + path.string());
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    throw IoError(IoErrorKind::Parse, path.string() + ": " + e.what());
  }
  WorldConfig cfg;
  for (const auto& item : items) {
    if (item.inputs.size() != 1) continue;
    const std::string& v = item.inputs.front();
    const std::string where = path.string() + " key '" + item.name + "'";
    if (item.name == "latent_dim" || item.name == "d_w") cfg.latent_dim = static_cast<Index>(parse_number<std::uint64_t>(v, where));
    else if (item.name == "K") cfg.K = static_cast<Index>(parse_number<std::uint64_t>(v, where));
    else if (item.name == "L") cfg.L = static_cast<Index>(parse_number<std::uint64_t>(v, where));
    else if (item.name == "sigma") cfg.sigma = parse_number<double>(v, where);
    else if (item.name == "seed") cfg.seed = parse_number<std::uint64_t>(v, where);
    else if (item.name == "nuisance_dim") cfg.nuisance_dim = static_cast<Index>(parse_number<std::uint64_t>(v, where));
    else if (item.name == "nonlinearity") cfg.nonlinearity = parse_number<double>(v, where);
    else throw IoError(IoErrorKind::Schema, path.string() + ": unknown world key '" + item.name + "'");
  }
  return cfg;
}

Eigen::VectorXd read_latent_json(const fs::path& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoErrorKind::Parse, path.string() + ": " + e.what());
  }
  const nlohmann::json& arr = j.is_object() && j.contains("w") ? j.at("w") : j;
  if (!arr.is_array() || arr.empty())
    throw IoError(IoErrorKind::Schema, path.string() + ": expected a latent array or {\"w\": [...]}");
  Eigen::VectorXd w(static_cast<Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) throw IoError(IoErrorKind::Schema, path.string() + ": latent entries must be numbers");
    w[static_cast<Index>(i)] = arr[i].get<double>();
  }
  return w;
}

}  // namespace nrsfm::io
