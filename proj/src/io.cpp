#include "hact/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "binary.hpp"
#include "hact/error.hpp"

namespace hact {
namespace fs = std::filesystem;
namespace {

std::string slurp(std::istream& is) {
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

double to_double(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw DataError(where + ": expected a number, got '" + s + "'");
  return v;
}

std::size_t to_size(const std::string& s, const std::string& where) {
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw DataError(where + ": expected a non-negative integer, got '" + s + "'");
  }
  return std::stoull(s);
}

std::string number(double v) {
  char buf[40];
  if (v == std::floor(v) && std::abs(v) < 1e15) {
    std::snprintf(buf, sizeof buf, "%.0f", v);
  } else {
    std::snprintf(buf, sizeof buf, "%.17g", v);
  }
  return buf;
}

}  // namespace

bool is_unit8(const Tensor& t) {
  for (double v : t.data()) {
    const double k = std::round(v * 255.0);
    if (k < 0.0 || k > 255.0 || k / 255.0 != v) return false;
  }
  return true;
}

void write_hfrm(std::ostream& os, const Tensor& t, FrameEncoding enc) {
  if (enc == FrameEncoding::kUnit8 && !is_unit8(t)) throw DataError("hfrm: values are not multiples of 1/255");
  detail::ByteWriter w;
  w.bytes("HFRM");
  w.u8(kFrameVersion);
  w.u8(static_cast<std::uint8_t>(enc));
  w.u32(static_cast<std::uint32_t>(t.ndim()));
  for (auto d : t.shape()) w.u64(d);
  for (double v : t.data()) {
    if (enc == FrameEncoding::kUnit8) {
      w.u8(static_cast<std::uint8_t>(std::round(v * 255.0)));
    } else {
      w.f64(v);
    }
  }
  os.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!os) throw DataError("hfrm: write failed");
}

Tensor read_hfrm(std::istream& is, const std::string& source) {
  const std::string buf = slurp(is);
  detail::ByteReader r(buf, source);
  if (r.bytes(4, "magic") != "HFRM") r.fail("bad magic (expected HFRM)");
  const std::uint8_t version = r.u8("version");
  if (version != kFrameVersion) r.fail("unsupported version " + std::to_string(version));
  const std::uint8_t enc = r.u8("encoding");
  if (enc != 1 && enc != 2) r.fail("unknown element encoding " + std::to_string(enc));
  const std::uint32_t rank = r.u32("rank");
  if (rank > 8) r.fail("implausible rank " + std::to_string(rank));
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u64("extent"));
  const std::size_t n = shape_numel(shape);
  r.need(n * (enc == 1 ? 1 : 8), "element data");
  std::vector<double> v(n);
  for (auto& x : v) x = enc == 1 ? r.u8() / 255.0 : r.f64();
  if (!r.done()) r.fail("trailing bytes");
  return Tensor(std::move(shape), std::move(v));
}

void save_hfrm(const std::string& path, const Tensor& t, FrameEncoding enc) {
  auto out = open_out(path);
  write_hfrm(out, t, enc);
}

Tensor load_hfrm(const std::string& path) {
  auto in = open_in(path);
  return read_hfrm(in, path);
}

void write_pnm(std::ostream& os, const Tensor& image) {
  if (image.ndim() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw ShapeError("pnm: expected a [1,H,W] or [3,H,W] image");
  }
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  os << (C == 1 ? "P5" : "P6") << "\n" << W << " " << H << "\n255\n";
  const auto v = image.data();
  std::string px(C * H * W, '\0');
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < C; ++c) {
        const double s = std::clamp(v[(c * H + y) * W + x], 0.0, 1.0);
        px[(y * W + x) * C + c] = static_cast<char>(static_cast<std::uint8_t>(std::round(s * 255.0)));
      }
    }
  }
  os.write(px.data(), static_cast<std::streamsize>(px.size()));
  if (!os) throw DataError("pnm: write failed");
}

Tensor read_pnm(std::istream& is, const std::string& source) {
  const std::string buf = slurp(is);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < buf.size()) {
      if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (start == pos) throw LoadError(source + ": truncated header at offset " + std::to_string(pos));
    return buf.substr(start, pos - start);
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P6") throw LoadError(source + ": not a binary PGM/PPM (magic '" + magic + "')");
  const std::size_t C = magic == "P5" ? 1 : 3;
  const std::size_t W = to_size(token(), source), H = to_size(token(), source);
  const std::size_t maxval = to_size(token(), source);
  if (maxval != 255) throw LoadError(source + ": only maxval 255 is supported");
  ++pos;  // single whitespace before the raster
  if (buf.size() < pos || buf.size() - pos != C * H * W) {
    throw LoadError(source + ": raster of " + std::to_string(buf.size() - std::min(pos, buf.size())) +
                    " bytes at offset " + std::to_string(pos) + ", expected " + std::to_string(C * H * W));
  }
  std::vector<double> v(C * H * W);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < C; ++c) {
        v[(c * H + y) * W + x] = static_cast<std::uint8_t>(buf[pos + (y * W + x) * C + c]) / 255.0;
      }
    }
  }
  return Tensor({C, H, W}, std::move(v));
}

void save_pnm(const std::string& path, const Tensor& image) {
  auto out = open_out(path);
  write_pnm(out, image);
}

Tensor load_pnm(const std::string& path) {
  auto in = open_in(path);
  return read_pnm(in, path);
}

void write_skeletons(std::ostream& os, const std::vector<std::pair<std::string, const SkeletonSequence*>>& clips) {
  char buf[40];
  for (const auto& [id, seq] : clips) {
    for (std::size_t f = 0; f < seq->frames(); ++f) {
      os << id << " " << f << " " << seq->joints();
      for (double v : seq->frame(f)) {
        std::snprintf(buf, sizeof buf, " %.17g", v);
        os << buf;
      }
      os << "\n";
    }
  }
}

std::map<std::string, SkeletonSequence> read_skeletons(std::istream& is, const std::string& source) {
  std::map<std::string, SkeletonSequence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() < 3) throw DataError(where + ": expected clip_id frame_idx J coordinates");
    const std::size_t frame = to_size(tok[1], where), J = to_size(tok[2], where);
    const std::size_t values = tok.size() - 3;
    if (J == 0 || (values != 2 * J && values != 3 * J)) {
      throw DataError(where + ": " + std::to_string(values) + " coordinates do not match J=" + std::to_string(J));
    }
    const std::size_t dims = values / J;
    auto it = out.find(tok[0]);
    if (it == out.end()) it = out.emplace(tok[0], SkeletonSequence(dims, J)).first;
    SkeletonSequence& seq = it->second;
    if (seq.dims() != dims || seq.joints() != J) throw DataError(where + ": joint layout changes within clip " + tok[0]);
    if (frame != seq.frames()) {
      throw DataError(where + ": frame " + std::to_string(frame) + " of clip " + tok[0] + " out of order");
    }
    std::vector<double> v;
    for (std::size_t i = 3; i < tok.size(); ++i) v.push_back(to_double(tok[i], where));
    seq.add_frame(v);
  }
  return out;
}

void write_matrix_csv(std::ostream& os, const std::vector<double>& values, std::size_t cols) {
  if (cols == 0 || values.size() % cols != 0) throw ShapeError("matrix csv: values do not fill whole rows");
  for (std::size_t i = 0; i < values.size(); ++i) {
    os << number(values[i]) << ((i + 1) % cols == 0 ? "\n" : ",");
  }
}

std::vector<std::vector<double>> read_matrix_csv(std::istream& is, const std::string& source) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    std::vector<double> row;
    for (const auto& cell : split_csv(line)) row.push_back(to_double(cell, where));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw DataError(where + ": row has " + std::to_string(row.size()) + " columns, expected " +
                      std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_confusion_csv(std::ostream& os, const ConfusionMatrix& c) {
  write_matrix_csv(os, std::vector<double>(c.values().begin(), c.values().end()), c.classes());
}

ConfusionMatrix read_confusion_csv(std::istream& is, const std::string& source) {
  const auto rows = read_matrix_csv(is, source);
  if (rows.empty() || rows.size() != rows.front().size()) {
    throw DataError(source + ": confusion matrix must be square and non-empty");
  }
  std::vector<double> v;
  for (const auto& r : rows) v.insert(v.end(), r.begin(), r.end());
  try {
    return ConfusionMatrix(rows.size(), std::move(v));
  } catch (const Error& e) {
    throw DataError(source + ": " + e.what());
  }
}

const char* split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }

void write_text_file(const std::string& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw DataError("cannot write " + path);
}

std::string read_text_file(const std::string& path) {
  auto in = open_in(path);
  return slurp(in);
}

void write_dataset(const std::string& dir, const StoredDataset& data, FrameStorage storage) {
  if (data.split.size() != data.clips.size()) throw ShapeError("dataset: one split entry per clip is required");
  const fs::path root(dir);
  if (fs::exists(root / "manifest.csv")) throw DataError(dir + " already holds a dataset; refusing to overwrite");
  fs::create_directories(root / "frames");

  const DatasetInfo& in = data.info;
  std::ostringstream meta;
  char buf[64];
  meta << "classes = " << in.classes << "\nsuperfamilies = " << in.superfamilies << "\nwidth = " << in.width
       << "\nheight = " << in.height << "\npreprocessed = " << (in.preprocessed ? "true" : "false") << "\n";
  if (in.has_projection) {
    for (auto [k, v] : {std::pair{"c_x", in.projection.c_x}, std::pair{"c_y", in.projection.c_y},
                        std::pair{"b_x", in.projection.b_x}, std::pair{"b_y", in.projection.b_y}}) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      meta << k << " = " << buf << "\n";
    }
  }
  write_text_file((root / "dataset.txt").string(), meta.str());

  std::ostringstream manifest;
  manifest << "clip_id,label,superfamily,split,frames\n";
  std::vector<std::pair<std::string, const SkeletonSequence*>> s2, s3;
  for (std::size_t i = 0; i < data.clips.size(); ++i) {
    const RawClip& c = data.clips[i];
    if (c.id.empty() || c.id.find_first_of(", /\\\t\n") != std::string::npos) {
      throw DataError("dataset: invalid clip id '" + c.id + "'");
    }
    std::string rel;
    if (storage == FrameStorage::kHfrm) {
      rel = "frames/" + c.id + ".hfrm";
      save_hfrm((root / rel).string(), c.frames, is_unit8(c.frames) ? FrameEncoding::kUnit8 : FrameEncoding::kFloat64);
    } else {
      rel = "frames/" + c.id;
      const std::size_t T = c.frames.dim(0), C = c.frames.dim(1), H = c.frames.dim(2), W = c.frames.dim(3);
      const auto v = c.frames.data();
      for (std::size_t t = 0; t < T; ++t) {
        std::vector<double> f(v.begin() + static_cast<std::ptrdiff_t>(t * C * H * W),
                              v.begin() + static_cast<std::ptrdiff_t>((t + 1) * C * H * W));
        std::snprintf(buf, sizeof buf, "/%04zu", t);
        save_pnm((root / (rel + buf + (C == 1 ? ".pgm" : ".ppm"))).string(), Tensor({C, H, W}, std::move(f)));
      }
    }
    manifest << c.id << "," << c.label << "," << c.superfamily << "," << split_name(data.split[i]) << "," << rel
             << "\n";
    if (!c.skeleton2d.empty()) s2.emplace_back(c.id, &c.skeleton2d);
    if (!c.skeleton3d.empty()) s3.emplace_back(c.id, &c.skeleton3d);
  }
  if (!s2.empty()) {
    auto out = open_out((root / "skeleton2d.txt").string());
    write_skeletons(out, s2);
  }
  if (!s3.empty()) {
    auto out = open_out((root / "skeleton3d.txt").string());
    write_skeletons(out, s3);
  }
  write_text_file((root / "manifest.csv").string(), manifest.str());
}

StoredDataset read_dataset(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::exists(root / "manifest.csv")) throw DataError(dir + ": no manifest.csv (not a dataset directory)");
  StoredDataset data;
  DatasetInfo& info = data.info;
  {
    const std::string src = (root / "dataset.txt").string();
    std::istringstream in(read_text_file(src));
    std::string line;
    std::size_t lineno = 0;
    int camera = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = strip_cr(line);
      if (line.empty()) continue;
      const std::string where = src + ":" + std::to_string(lineno);
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) throw DataError(where + ": expected 'key = value'");
      const std::string k = line.substr(0, eq), v = line.substr(eq + 3);
      if (k == "classes") {
        info.classes = to_size(v, where);
      } else if (k == "superfamilies") {
        info.superfamilies = to_size(v, where);
      } else if (k == "width") {
        info.width = to_size(v, where);
      } else if (k == "height") {
        info.height = to_size(v, where);
      } else if (k == "preprocessed") {
        if (v != "true" && v != "false") throw DataError(where + ": expected true or false");
        info.preprocessed = v == "true";
      } else if (k == "c_x" || k == "c_y" || k == "b_x" || k == "b_y") {
        const double d = to_double(v, where);
        (k == "c_x" ? info.projection.c_x : k == "c_y" ? info.projection.c_y : k == "b_x" ? info.projection.b_x
                                                                                        : info.projection.b_y) = d;
        ++camera;
      } else {
        throw DataError(where + ": unknown key '" + k + "'");
      }
    }
    if (camera != 0 && camera != 4) throw DataError(src + ": camera needs all of c_x, c_y, b_x, b_y");
    info.has_projection = camera == 4;
    if (info.classes == 0) throw DataError(src + ": classes must be positive");
  }

  std::map<std::string, SkeletonSequence> sk2, sk3;
  for (auto [name, target] : {std::pair{"skeleton2d.txt", &sk2}, std::pair{"skeleton3d.txt", &sk3}}) {
    const fs::path p = root / name;
    if (!fs::exists(p)) continue;
    auto in = open_in(p.string());
    *target = read_skeletons(in, p.string());
  }

  const std::string src = (root / "manifest.csv").string();
  std::istringstream in(read_text_file(src));
  std::string line;
  std::getline(in, line);
  if (strip_cr(line) != "clip_id,label,superfamily,split,frames") throw DataError(src + ":1: unexpected header");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    const std::string where = src + ":" + std::to_string(lineno);
    const auto cells = split_csv(line);
    if (cells.size() != 5) throw DataError(where + ": expected 5 columns");
    RawClip c;
    c.id = cells[0];
    c.label = to_size(cells[1], where);
    c.superfamily = to_size(cells[2], where);
    if (c.label >= info.classes) throw DataError(where + ": label " + cells[1] + " outside the class range");
    Split s;
    if (cells[3] == "train") {
      s = Split::kTrain;
    } else if (cells[3] == "test") {
      s = Split::kTest;
    } else {
      throw DataError(where + ": split must be train or test");
    }
    const fs::path frames = root / cells[4];
    if (fs::is_directory(frames)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(frames)) files.push_back(e.path());
      std::sort(files.begin(), files.end());
      if (files.empty()) throw DataError(where + ": no frames in " + frames.string());
      std::vector<double> v;
      Shape fshape;
      for (const auto& f : files) {
        const Tensor img = load_pnm(f.string());
        if (fshape.empty()) fshape = img.shape();
        if (img.shape() != fshape) throw DataError(f.string() + ": frame size differs from the first frame");
        v.insert(v.end(), img.data().begin(), img.data().end());
      }
      c.frames = Tensor({files.size(), fshape[0], fshape[1], fshape[2]}, std::move(v));
    } else {
      c.frames = load_hfrm(frames.string());
    }
    if (c.frames.ndim() != 4) throw DataError(where + ": frames must be [T,C,H,W]");
    if (auto it = sk2.find(c.id); it != sk2.end()) c.skeleton2d = it->second;
    if (auto it = sk3.find(c.id); it != sk3.end()) c.skeleton3d = it->second;
    data.clips.push_back(std::move(c));
    data.split.push_back(s);
  }
  if (data.clips.empty()) throw DataError(src + ": no clips");
  return data;
}

}  // namespace hact
