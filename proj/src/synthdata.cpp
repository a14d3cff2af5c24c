#include "ahl/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <cstdio>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ahl/errors.hpp"
#include "ahl/format.hpp"

namespace ahl {

namespace {

constexpr double kQuantum = 65535.0;
// Landmarks are snapped to multiples of 2^-20 px so mirroring and integer
// shifts are exact in double precision.
constexpr double kCoordGrid = 0x1.0p-20;

double snap(double v) { return std::round(v / kCoordGrid) * kCoordGrid; }
double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * kQuantum) / kQuantum; }

struct Figure {
  Point center;
  double scale;
  double angle;  // radians
};

struct LocalPoint {
  double u;  // row offset
  double v;  // col offset
};

struct FigureGeometry {
  LocalPoint ellipse_center;
  double ellipse_ru;
  double ellipse_rv;
  LocalPoint tri[3];
};

FigureGeometry geometry(double extent, double scale) {
  const double s = extent * scale;
  return FigureGeometry{{-0.10 * s, -0.08 * s},
                        0.14 * s,
                        0.10 * s,
                        {{-0.12 * s, 0.16 * s}, {0.16 * s, 0.06 * s}, {0.16 * s, 0.26 * s}}};
}

LocalPoint landmark_local(const FigureGeometry& g, std::size_t index) {
  const LocalPoint e = g.ellipse_center;
  switch (index) {
    case 0: return {e.u - g.ellipse_ru, e.v};
    case 1: return e;
    case 2: return g.tri[0];
    case 3: {
      const double tu = (g.tri[0].u + g.tri[1].u + g.tri[2].u) / 3.0;
      const double tv = (g.tri[0].v + g.tri[1].v + g.tri[2].v) / 3.0;
      return {(e.u + tu) / 2.0, (e.v + tv) / 2.0};
    }
    case 4: return {e.u + g.ellipse_ru, e.v};
    case 5: return g.tri[1];
    case 6: return g.tri[2];
    default: return {e.u, e.v - g.ellipse_rv};
  }
}

Point to_image(const Figure& f, LocalPoint p) {
  const double c = std::cos(f.angle), s = std::sin(f.angle);
  return {f.center.row + c * p.u - s * p.v, f.center.col + s * p.u + c * p.v};
}

LocalPoint to_local(const Figure& f, double row, double col) {
  const double c = std::cos(f.angle), s = std::sin(f.angle);
  const double dr = row - f.center.row, dc = col - f.center.col;
  return {c * dr + s * dc, -s * dr + c * dc};
}

bool inside_triangle(const LocalPoint tri[3], LocalPoint p) {
  const auto edge = [](LocalPoint a, LocalPoint b, LocalPoint q) {
    return (b.u - a.u) * (q.v - a.v) - (b.v - a.v) * (q.u - a.u);
  };
  const double d0 = edge(tri[0], tri[1], p), d1 = edge(tri[1], tri[2], p), d2 = edge(tri[2], tri[0], p);
  const bool neg = d0 < 0 || d1 < 0 || d2 < 0;
  const bool pos = d0 > 0 || d1 > 0 || d2 > 0;
  return !(neg && pos);
}

Sample generate_sample(std::size_t index, std::size_t h, std::size_t w, std::size_t n_landmarks,
                       std::uint64_t seed) {
  Rng rng(derive_seed(seed, "sample", index));
  const double extent = static_cast<double>(std::min(h, w));
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };

  for (int attempt = 0; attempt < 100; ++attempt) {
    Figure fig{{uniform(0.4, 0.6) * static_cast<double>(h - 1), uniform(0.4, 0.6) * static_cast<double>(w - 1)},
               uniform(0.8, 1.1), uniform(-25.0, 25.0) * std::numbers::pi / 180.0};
    const FigureGeometry g = geometry(extent, fig.scale);

    LandmarkSet lm;
    lm.names = synth_landmark_names(n_landmarks);
    for (std::size_t i = 0; i < n_landmarks; ++i) {
      const Point p = to_image(fig, landmark_local(g, i));
      lm.coords.push_back({snap(p.row), snap(p.col)});
    }
    if (!within_margin(lm, h, w)) continue;

    Tensor image({1, h, w});
    std::normal_distribution<double> noise(0.0, 0.05);
    const double band = 1.0;
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        const LocalPoint q = to_local(fig, static_cast<double>(r), static_cast<double>(c));
        const double eu = (q.u - g.ellipse_center.u) / g.ellipse_ru;
        const double ev = (q.v - g.ellipse_center.v) / g.ellipse_rv;
        const double rho = std::sqrt(eu * eu + ev * ev);
        double v = 0.2;
        if (std::abs(rho - 1.0) * std::min(g.ellipse_ru, g.ellipse_rv) < band) {
          v = 0.9;
        } else if (inside_triangle(g.tri, q)) {
          v = 0.6;
        }
        image.at(0, r, c) = quantize(v + noise(rng));
      }
    }
    char id[32];
    std::snprintf(id, sizeof id, "s%05zu", index);
    return Sample{std::move(image), std::move(lm), id};
  }
  throw ConfigError("gen_dataset: figure does not fit a " + std::to_string(h) + "x" + std::to_string(w) +
                    " image with a " + std::to_string(kBorderMargin) + " px margin after 100 attempts");
}

[[noreturn]] void format_error(const std::filesystem::path& path, std::size_t offset, const std::string& what) {
  throw FormatError(path.string() + " (byte " + std::to_string(offset) + "): " + what);
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::vector<std::string> synth_landmark_names(std::size_t count) {
  static const char* const kNames[kMaxSynthLandmarks] = {"ellipse_top",   "ellipse_center", "triangle_apex",
                                                         "figure_centroid", "ellipse_bottom", "triangle_left",
                                                         "triangle_right",  "ellipse_left"};
  if (count == 0 || count > kMaxSynthLandmarks) {
    throw ConfigError("synthetic benchmark supports 1.." + std::to_string(kMaxSynthLandmarks) + " landmarks");
  }
  return {kNames, kNames + count};
}

bool within_margin(const LandmarkSet& landmarks, std::size_t height, std::size_t width, double margin) {
  const double max_row = static_cast<double>(height) - 1.0 - margin;
  const double max_col = static_cast<double>(width) - 1.0 - margin;
  return std::all_of(landmarks.coords.begin(), landmarks.coords.end(), [&](const Point& p) {
    return p.row >= margin && p.row <= max_row && p.col >= margin && p.col <= max_col;
  });
}

DatasetSplit gen_dataset(std::size_t n, std::size_t height, std::size_t width, std::size_t landmarks,
                         std::uint64_t seed) {
  std::vector<std::string> errors;
  if (n < 10) errors.push_back("n must be >= 10 (got " + std::to_string(n) + ")");
  if (height < 8 || width < 8) errors.push_back("image size must be at least 8x8");
  if (landmarks < 1 || landmarks > kMaxSynthLandmarks) {
    errors.push_back("landmarks must be in 1.." + std::to_string(kMaxSynthLandmarks));
  }
  if (!errors.empty()) throw ConfigError(errors);

  DatasetSplit split;
  split.height = height;
  split.width = width;
  split.landmarks = landmarks;
  split.seed = seed;
  split.landmark_names = synth_landmark_names(landmarks);
  const std::size_t n_train = n * 6 / 10;
  const std::size_t n_val = n * 2 / 10;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s = generate_sample(i, height, width, landmarks, seed);
    if (i < n_train) {
      split.train.push_back(std::move(s));
    } else if (i < n_train + n_val) {
      split.validation.push_back(std::move(s));
    } else {
      split.test.push_back(std::move(s));
    }
  }
  return split;
}

void check_disjoint(const DatasetSplit& split) {
  std::set<std::string> seen;
  for (const auto* part : {&split.train, &split.validation, &split.test}) {
    for (const auto& s : *part) {
      if (!seen.insert(s.id).second) throw ConfigError("dataset splits overlap: id " + s.id + " appears twice");
    }
  }
}

// ---- augmentation -----------------------------------------------------------------

AugmentParams draw_augmentation(Rng& rng, std::size_t height, std::size_t width) {
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
  AugmentParams p;
  p.flip = uniform01(rng) < 0.5;
  p.shift_row = uniform(-0.1, 0.1) * static_cast<double>(height);
  p.shift_col = uniform(-0.1, 0.1) * static_cast<double>(width);
  p.scale = uniform(0.9, 1.1);
  p.angle_deg = uniform(-15.0, 15.0);
  p.brightness = uniform(-0.1, 0.1);
  p.contrast = uniform(0.9, 1.1);
  return p;
}

Sample apply_augmentation(const Sample& sample, const AugmentParams& p) {
  const std::size_t h = sample.image.dim(1), w = sample.image.dim(2);
  const double cr = (static_cast<double>(h) - 1.0) / 2.0;
  const double cc = (static_cast<double>(w) - 1.0) / 2.0;
  const double wmax = static_cast<double>(w) - 1.0;
  const double theta = p.angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);

  Sample out;
  out.id = sample.id;
  out.landmarks.names = sample.landmarks.names;
  for (const Point& q : sample.landmarks.coords) {
    const double col = p.flip ? wmax - q.col : q.col;
    const double dr = q.row - cr, dc = col - cc;
    out.landmarks.coords.push_back({p.scale * (cs * dr - sn * dc) + cr + p.shift_row,
                                    p.scale * (sn * dr + cs * dc) + cc + p.shift_col});
  }

  out.image = Tensor({1, h, w});
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      // inverse map: output pixel -> source pixel
      const double tr = (static_cast<double>(r) - cr - p.shift_row) / p.scale;
      const double tc = (static_cast<double>(c) - cc - p.shift_col) / p.scale;
      const double sr = cs * tr + sn * tc + cr;
      double sc = -sn * tr + cs * tc + cc;
      if (p.flip) sc = wmax - sc;
      const long long ir = std::llround(sr), ic = std::llround(sc);
      double v = 0.0;
      if (ir >= 0 && ir < static_cast<long long>(h) && ic >= 0 && ic < static_cast<long long>(w)) {
        v = sample.image.at(0, static_cast<std::size_t>(ir), static_cast<std::size_t>(ic));
      }
      out.image.at(0, r, c) = std::clamp(p.contrast * v + p.brightness, 0.0, 1.0);
    }
  }
  return out;
}

Sample augment(const Sample& sample, Rng& rng) {
  const std::size_t h = sample.image.dim(1), w = sample.image.dim(2);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const AugmentParams p = draw_augmentation(rng, h, w);
    Sample out = apply_augmentation(sample, p);
    if (within_margin(out.landmarks, h, w)) return out;
  }
  return sample;
}

// ---- on-disk format ------------------------------------------------------------------

void write_pgm16(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 1) throw DimensionError("write_pgm16: expected 1 x H x W image");
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << w << ' ' << h << "\n65535\n";
  std::vector<unsigned char> bytes(2 * h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(image[i], 0.0, 1.0) * kQuantum));
    bytes[2 * i] = static_cast<unsigned char>(q >> 8);  // PGM stores 16-bit samples big-endian
    bytes[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Tensor read_pgm16(const std::filesystem::path& path) {
  const std::vector<char> buf = read_file(path);
  std::size_t pos = 0;
  const auto skip_space = [&] {
    while (pos < buf.size()) {
      if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  const auto read_uint = [&](const char* what) -> std::size_t {
    skip_space();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
      v = v * 10 + static_cast<std::size_t>(buf[pos] - '0');
      ++pos;
    }
    if (pos == start) format_error(path, start, std::string("expected ") + what);
    return v;
  };

  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5') format_error(path, 0, "missing P5 magic");
  pos = 2;
  const std::size_t w = read_uint("width");
  const std::size_t h = read_uint("height");
  const std::size_t maxval = read_uint("maxval");
  if (w == 0 || h == 0) format_error(path, pos, "zero image extent");
  if (maxval != 65535) format_error(path, pos, "maxval must be 65535, got " + std::to_string(maxval));
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos]))) {
    format_error(path, pos, "missing whitespace after header");
  }
  ++pos;
  const std::size_t need = 2 * h * w;
  if (buf.size() - pos < need) {
    format_error(path, buf.size(), "truncated pixel data: expected " + std::to_string(need) + " bytes, found " +
                                       std::to_string(buf.size() - pos));
  }
  Tensor image({1, h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    const auto hi = static_cast<unsigned char>(buf[pos + 2 * i]);
    const auto lo = static_cast<unsigned char>(buf[pos + 2 * i + 1]);
    image[i] = static_cast<double>((hi << 8) | lo) / kQuantum;
  }
  return image;
}

void save_dataset(const DatasetSplit& split, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());

  nlohmann::json meta;
  meta["n"] = split.total();
  meta["height"] = split.height;
  meta["width"] = split.width;
  meta["landmarks"] = split.landmarks;
  meta["seed"] = split.seed;
  meta["landmark_names"] = split.landmark_names;
  const auto ids = [](const std::vector<Sample>& part) {
    std::vector<std::string> out;
    for (const auto& s : part) out.push_back(s.id);
    return out;
  };
  meta["train"] = ids(split.train);
  meta["validation"] = ids(split.validation);
  meta["test"] = ids(split.test);
  {
    std::ofstream out(dir / "meta.json");
    if (!out) throw IoError("cannot write " + (dir / "meta.json").string());
    out << meta.dump(2) << '\n';
  }

  std::ofstream csv(dir / "landmarks.csv");
  if (!csv) throw IoError("cannot write " + (dir / "landmarks.csv").string());
  csv << "id,landmark_index,row,col\n";
  for (const auto* part : {&split.train, &split.validation, &split.test}) {
    for (const auto& s : *part) {
      write_pgm16(dir / "images" / (s.id + ".pgm"), s.image);
      for (std::size_t j = 0; j < s.landmarks.size(); ++j) {
        csv << s.id << ',' << j << ',' << format_double(s.landmarks.coords[j].row) << ','
            << format_double(s.landmarks.coords[j].col) << '\n';
      }
    }
  }
  if (!csv) throw IoError("failed writing landmarks.csv");
}

DatasetSplit load_dataset(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw IoError("cannot open " + meta_path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_in);
  } catch (const nlohmann::json::parse_error& e) {
    format_error(meta_path, e.byte, e.what());
  }

  DatasetSplit split;
  std::vector<std::string> train_ids, val_ids, test_ids;
  try {
    split.height = meta.at("height").get<std::size_t>();
    split.width = meta.at("width").get<std::size_t>();
    split.landmarks = meta.at("landmarks").get<std::size_t>();
    split.seed = meta.at("seed").get<std::uint64_t>();
    split.landmark_names = meta.at("landmark_names").get<std::vector<std::string>>();
    train_ids = meta.at("train").get<std::vector<std::string>>();
    val_ids = meta.at("validation").get<std::vector<std::string>>();
    test_ids = meta.at("test").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    format_error(meta_path, 0, e.what());
  }
  if (split.landmark_names.size() != split.landmarks) format_error(meta_path, 0, "landmark_names length mismatch");

  // landmarks.csv
  const auto csv_path = dir / "landmarks.csv";
  std::ifstream csv(csv_path, std::ios::binary);
  if (!csv) throw IoError("cannot open " + csv_path.string());
  std::map<std::string, std::vector<std::optional<Point>>> coords;
  std::string line;
  std::size_t offset = 0;
  bool header = true;
  while (std::getline(csv, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (header) {
      if (line != "id,landmark_index,row,col") format_error(csv_path, line_start, "unexpected header");
      header = false;
      continue;
    }
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != 4) format_error(csv_path, line_start, "expected 4 fields");
    std::size_t idx = 0;
    try {
      idx = static_cast<std::size_t>(parse_double(cells[1], "landmark_index"));
      auto& slot = coords[cells[0]];
      if (idx >= split.landmarks) format_error(csv_path, line_start, "landmark index out of range");
      slot.resize(split.landmarks);
      slot[idx] = Point{parse_double(cells[2], "row"), parse_double(cells[3], "col")};
    } catch (const FormatError& e) {
      format_error(csv_path, line_start, e.what());
    }
  }

  const auto load_part = [&](const std::vector<std::string>& ids, std::vector<Sample>& part) {
    for (const auto& id : ids) {
      Sample s;
      s.id = id;
      s.image = read_pgm16(dir / "images" / (id + ".pgm"));
      if (s.image.dim(1) != split.height || s.image.dim(2) != split.width) {
        format_error(dir / "images" / (id + ".pgm"), 0, "image extent disagrees with meta.json");
      }
      const auto it = coords.find(id);
      if (it == coords.end()) format_error(csv_path, 0, "no landmarks for id " + id);
      for (std::size_t j = 0; j < split.landmarks; ++j) {
        if (!it->second[j]) format_error(csv_path, 0, "missing landmark " + std::to_string(j) + " for id " + id);
        s.landmarks.coords.push_back(*it->second[j]);
      }
      s.landmarks.names = split.landmark_names;
      try {
        s.landmarks.validate(split.height, split.width);
      } catch (const ConfigError& e) {
        throw ConfigError(csv_path.string() + ": sample " + id + ": " + e.what());
      }
      part.push_back(std::move(s));
    }
  };
  load_part(train_ids, split.train);
  load_part(val_ids, split.validation);
  load_part(test_ids, split.test);
  check_disjoint(split);
  return split;
}

bool bitwise_equal(const Sample& a, const Sample& b) {
  if (a.id != b.id || a.landmarks.names != b.landmarks.names || a.landmarks.size() != b.landmarks.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.landmarks.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a.landmarks.coords[i].row) !=
            std::bit_cast<std::uint64_t>(b.landmarks.coords[i].row) ||
        std::bit_cast<std::uint64_t>(a.landmarks.coords[i].col) !=
            std::bit_cast<std::uint64_t>(b.landmarks.coords[i].col)) {
      return false;
    }
  }
  return bitwise_equal(a.image, b.image);
}

bool bitwise_equal(const DatasetSplit& a, const DatasetSplit& b) {
  const auto same = [](const std::vector<Sample>& x, const std::vector<Sample>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!bitwise_equal(x[i], y[i])) return false;
    }
    return true;
  };
  return a.height == b.height && a.width == b.width && a.landmarks == b.landmarks && a.seed == b.seed &&
         a.landmark_names == b.landmark_names && same(a.train, b.train) && same(a.validation, b.validation) &&
         same(a.test, b.test);
}

}  // namespace ahl
