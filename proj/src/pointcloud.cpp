#include "softclu/pointcloud.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string_view>

namespace softclu {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::optional<double> to_double(std::string_view tok) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size()) return std::nullopt;
  return v;
}

std::optional<long> to_long(std::string_view tok) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size()) return std::nullopt;
  return v;
}

// Line reader that tracks 1-based line numbers for error messages.
class LineReader {
 public:
  explicit LineReader(const std::filesystem::path& path) : in_(path) {
    if (!in_) throw IoError("cannot open " + path.string());
  }

  bool next(std::string& line) {
    if (!std::getline(in_, line)) return false;
    ++line_no_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  }

  // Next line that is neither blank nor a '#' comment.
  bool next_content(std::string& line) {
    while (next(line)) {
      auto toks = split_ws(line);
      if (!toks.empty() && toks.front().front() != '#') return true;
    }
    return false;
  }

  long line_no() const { return line_no_; }

 private:
  std::ifstream in_;
  long line_no_ = 0;
};

Eigen::RowVector3d parse_xyz(const std::vector<std::string_view>& toks, std::size_t offset,
                             long line) {
  if (toks.size() < offset + 3) throw ParseError("expected three coordinates", line);
  Eigen::RowVector3d p;
  for (int k = 0; k < 3; ++k) {
    auto v = to_double(toks[offset + k]);
    if (!v) throw ParseError("bad number '" + std::string(toks[offset + k]) + "'", line);
    if (!std::isfinite(*v)) throw ParseError("non-finite coordinate", line);
    p[k] = *v;
  }
  return p;
}

PointCloud finish(std::vector<Eigen::RowVector3d>& rows, const std::filesystem::path& path) {
  if (rows.empty()) throw EmptyCloudError("no vertices in " + path.string());
  PointCloud cloud;
  cloud.name = path.stem().string();
  cloud.points.resize(static_cast<Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) cloud.points.row(static_cast<Index>(i)) = rows[i];
  return cloud;
}

PointCloud load_off(const std::filesystem::path& path) {
  LineReader reader(path);
  std::string line;
  if (!reader.next_content(line)) throw ParseError("missing OFF header", reader.line_no());
  auto toks = split_ws(line);
  if (toks.front() != "OFF") throw ParseError("expected OFF header", reader.line_no());
  toks.erase(toks.begin());
  if (toks.empty()) {
    if (!reader.next_content(line)) throw ParseError("missing OFF counts", reader.line_no());
    toks = split_ws(line);
  }
  if (toks.size() < 2) throw ParseError("expected vertex and face counts", reader.line_no());
  auto nv = to_long(toks[0]);
  auto nf = to_long(toks[1]);
  if (!nv || !nf || *nv < 0 || *nf < 0) throw ParseError("bad OFF counts", reader.line_no());

  std::vector<Eigen::RowVector3d> rows;
  rows.reserve(static_cast<std::size_t>(*nv));
  for (long i = 0; i < *nv; ++i) {
    if (!reader.next_content(line)) throw ParseError("truncated vertex list", reader.line_no());
    rows.push_back(parse_xyz(split_ws(line), 0, reader.line_no()));
  }
  for (long f = 0; f < *nf; ++f) {
    if (!reader.next_content(line)) throw ParseError("truncated face list", reader.line_no());
    auto ft = split_ws(line);
    auto k = to_long(ft.front());
    if (!k || *k < 0 || ft.size() < static_cast<std::size_t>(*k) + 1)
      throw ParseError("malformed face", reader.line_no());
  }
  return finish(rows, path);
}

struct PlyElement {
  std::string name;
  long count = 0;
  std::vector<std::string> properties;
};

PointCloud load_ply(const std::filesystem::path& path) {
  LineReader reader(path);
  std::string line;
  if (!reader.next(line) || split_ws(line).empty() || split_ws(line).front() != "ply")
    throw ParseError("expected 'ply' magic", reader.line_no());

  std::vector<PlyElement> elements;
  bool ascii = false;
  for (;;) {
    if (!reader.next(line)) throw ParseError("missing end_header", reader.line_no());
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks[0] == "end_header") break;
    if (toks[0] == "comment" || toks[0] == "obj_info") continue;
    if (toks[0] == "format") {
      if (toks.size() < 2) throw ParseError("bad format line", reader.line_no());
      if (toks[1] != "ascii") throw ParseError("only ASCII PLY is supported", reader.line_no());
      ascii = true;
    } else if (toks[0] == "element") {
      if (toks.size() < 3) throw ParseError("bad element line", reader.line_no());
      auto count = to_long(toks[2]);
      if (!count || *count < 0) throw ParseError("bad element count", reader.line_no());
      elements.push_back({std::string(toks[1]), *count, {}});
    } else if (toks[0] == "property") {
      if (elements.empty() || toks.size() < 3)
        throw ParseError("property outside element", reader.line_no());
      elements.back().properties.emplace_back(toks.back());
    } else {
      throw ParseError("unknown header keyword '" + std::string(toks[0]) + "'", reader.line_no());
    }
  }
  if (!ascii) throw ParseError("missing format line", reader.line_no());

  std::vector<Eigen::RowVector3d> rows;
  for (const auto& el : elements) {
    std::array<std::size_t, 3> idx{};
    if (el.name == "vertex") {
      for (int k = 0; k < 3; ++k) {
        const char* axis[] = {"x", "y", "z"};
        auto it = std::find(el.properties.begin(), el.properties.end(), axis[k]);
        if (it == el.properties.end())
          throw ParseError(std::string("vertex element lacks property ") + axis[k],
                           reader.line_no());
        idx[k] = static_cast<std::size_t>(it - el.properties.begin());
      }
    }
    for (long i = 0; i < el.count; ++i) {
      if (!reader.next(line)) throw ParseError("truncated " + el.name + " data", reader.line_no());
      if (el.name != "vertex") continue;
      auto toks = split_ws(line);
      if (toks.size() < el.properties.size())
        throw ParseError("too few vertex values", reader.line_no());
      Eigen::RowVector3d p;
      for (int k = 0; k < 3; ++k) {
        auto v = to_double(toks[idx[k]]);
        if (!v) throw ParseError("bad number", reader.line_no());
        if (!std::isfinite(*v)) throw ParseError("non-finite coordinate", reader.line_no());
        p[k] = *v;
      }
      rows.push_back(p);
    }
  }
  return finish(rows, path);
}

PointCloud load_xyz(const std::filesystem::path& path) {
  LineReader reader(path);
  std::string line;
  std::vector<Eigen::RowVector3d> rows;
  while (reader.next(line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    rows.push_back(parse_xyz(toks, 0, reader.line_no()));
  }
  return finish(rows, path);
}

}  // namespace

CloudFormat format_from_extension(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".off") return CloudFormat::OFF;
  if (ext == ".ply") return CloudFormat::PLY_ASCII;
  if (ext == ".xyz" || ext == ".txt" || ext == ".pts") return CloudFormat::XYZ;
  throw ParseError("unrecognized point cloud extension '" + ext + "'", 0);
}

PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format) {
  switch (format) {
    case CloudFormat::OFF:
      return load_off(path);
    case CloudFormat::PLY_ASCII:
      return load_ply(path);
    case CloudFormat::XYZ:
      return load_xyz(path);
  }
  throw ParseError("unknown format", 0);
}

PointCloud load_cloud(const std::filesystem::path& path) {
  return load_cloud(path, format_from_extension(path));
}

PointCloud normalize(const PointCloud& cloud) {
  PointCloud out = cloud;
  if (cloud.size() == 0) return out;
  const Eigen::RowVector3d centroid = cloud.points.colwise().mean();
  out.points.rowwise() -= centroid;
  const double scale = out.points.rowwise().norm().maxCoeff();
  if (scale > 0.0 && std::isfinite(scale)) {
    out.points /= scale;
    // Re-center: division can leave a residual mean at the ulp level.
    out.points.rowwise() -= Eigen::RowVector3d(out.points.colwise().mean());
  } else {
    out.points.setZero();
  }
  return out;
}

PointCloud downsample_random(const PointCloud& cloud, Index target, std::uint64_t seed) {
  if (target < 1) throw ConfigError("downsample target must be >= 1");
  const Index n = cloud.size();
  std::mt19937_64 rng(seed);
  std::vector<Index> picks(static_cast<std::size_t>(target));
  if (n >= target) {
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    // Partial Fisher-Yates: the first `target` slots are a uniform sample.
    for (Index i = 0; i < target; ++i) {
      std::uniform_int_distribution<Index> pick(i, n - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    std::copy_n(idx.begin(), target, picks.begin());
  } else {
    std::uniform_int_distribution<Index> pick(0, n - 1);
    for (auto& p : picks) p = pick(rng);
  }
  PointCloud out;
  out.name = cloud.name;
  out.points.resize(target, 3);
  for (Index i = 0; i < target; ++i) out.points.row(i) = cloud.points.row(picks[static_cast<std::size_t>(i)]);
  return out;
}

LabeledCloud label_cloud(const PointCloud& cloud, const MatrixXd& gamma) {
  require_shape(gamma.rows() == cloud.size(), "label_cloud: gamma rows must equal point count");
  LabeledCloud out{cloud, {}, {}};
  out.labels.reserve(static_cast<std::size_t>(cloud.size()));
  out.confidences.reserve(static_cast<std::size_t>(cloud.size()));
  for (Index i = 0; i < gamma.rows(); ++i) {
    Index j = 0;
    const double c = gamma.row(i).maxCoeff(&j);
    out.labels.push_back(static_cast<int>(j));
    out.confidences.push_back(std::clamp(c, 0.0, 1.0));
  }
  return out;
}

void export_labeled_ply(const LabeledCloud& labeled, const std::filesystem::path& path,
                        const std::vector<Rgb>& palette) {
  const auto n = static_cast<std::size_t>(labeled.cloud.size());
  if (labeled.labels.size() != n) throw ShapeError("export_labeled_ply: one label per point");
  for (int l : labeled.labels)
    if (l < 0 || static_cast<std::size_t>(l) >= palette.size())
      throw ConfigError("palette has no color for label " + std::to_string(l));

  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "ply\nformat ascii 1.0\n";
  out << "comment softclu labeled cloud\n";
  out << "element vertex " << n << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n";
  out.precision(9);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = labeled.cloud.points.row(static_cast<Index>(i));
    const Rgb& c = palette[static_cast<std::size_t>(labeled.labels[i])];
    out << p[0] << ' ' << p[1] << ' ' << p[2] << ' ' << int{c[0]} << ' ' << int{c[1]} << ' '
        << int{c[2]} << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void save_xyz(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  for (Index i = 0; i < cloud.size(); ++i)
    out << cloud.points(i, 0) << ' ' << cloud.points(i, 1) << ' ' << cloud.points(i, 2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<Rgb> default_palette(int clusters) {
  std::vector<Rgb> palette;
  palette.reserve(static_cast<std::size_t>(std::max(clusters, 0)));
  // Golden-ratio hue walk; value alternates so neighbouring ids stay distinct.
  double hue = 0.0;
  for (int j = 0; j < clusters; ++j) {
    const double v = (j % 2 == 0) ? 0.95 : 0.7;
    const double s = 0.85;
    const double h6 = hue * 6.0;
    const int sector = static_cast<int>(h6) % 6;
    const double f = h6 - std::floor(h6);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    double r = 0, g = 0, b = 0;
    switch (sector) {
      case 0: r = v; g = t; b = p; break;
      case 1: r = q; g = v; b = p; break;
      case 2: r = p; g = v; b = t; break;
      case 3: r = p; g = q; b = v; break;
      case 4: r = t; g = p; b = v; break;
      default: r = v; g = p; b = q; break;
    }
    auto to8 = [](double x) { return static_cast<std::uint8_t>(std::lround(x * 255.0)); };
    palette.push_back({to8(r), to8(g), to8(b)});
    hue = std::fmod(hue + 0.618033988749895, 1.0);
  }
  return palette;
}

}  // namespace softclu
