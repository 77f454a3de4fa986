#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "hact/hierarchy.hpp"
#include "hact/preprocess.hpp"
#include "hact/synthetic.hpp"
#include "hact/tensor.hpp"

namespace hact {

// Raw tensor container: "HFRM", version byte, element type byte (1 = u8
// holding k/255, 2 = f64), u32 rank, u64 extents, then the elements, all
// little-endian.
enum class FrameEncoding : std::uint8_t { kUnit8 = 1, kFloat64 = 2 };
constexpr std::uint8_t kFrameVersion = 1;

void write_hfrm(std::ostream& os, const Tensor& t, FrameEncoding enc);
/// Throws LoadError naming the byte offset on a bad header or short data.
Tensor read_hfrm(std::istream& is, const std::string& source = "hfrm");
void save_hfrm(const std::string& path, const Tensor& t, FrameEncoding enc);
Tensor load_hfrm(const std::string& path);
/// True when every element is k/255 for an integer k in [0,255].
bool is_unit8(const Tensor& t);

// Binary PGM (one channel) or PPM (three channels) of a [C,H,W] image with values in [0,1].
void write_pnm(std::ostream& os, const Tensor& image);
Tensor read_pnm(std::istream& is, const std::string& source = "pnm");
void save_pnm(const std::string& path, const Tensor& image);
Tensor load_pnm(const std::string& path);

// One frame per line: clip_id frame_idx J followed by J*dims coordinates.
void write_skeletons(std::ostream& os, const std::vector<std::pair<std::string, const SkeletonSequence*>>& clips);
/// Frames of each clip must be contiguous and numbered from 0.
std::map<std::string, SkeletonSequence> read_skeletons(std::istream& is, const std::string& source = "skeletons");

// Comma-separated rows of numbers; integers print without a fraction.
void write_matrix_csv(std::ostream& os, const std::vector<double>& values, std::size_t cols);
std::vector<std::vector<double>> read_matrix_csv(std::istream& is, const std::string& source = "matrix");
void write_confusion_csv(std::ostream& os, const ConfusionMatrix& c);
ConfusionMatrix read_confusion_csv(std::istream& is, const std::string& source = "confusion");

enum class Split { kTrain, kTest };
const char* split_name(Split s);

struct DatasetInfo {
  std::size_t classes = 0;
  std::size_t superfamilies = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  bool has_projection = false;
  ProjectionParams projection;
  bool preprocessed = false;
};

struct StoredDataset {
  DatasetInfo info;
  std::vector<RawClip> clips;
  std::vector<Split> split;  // one per clip
};

enum class FrameStorage { kHfrm, kPnm };

// Directory layout:
//   dataset.txt     key = value metadata (classes, frame size, camera, preprocessed)
//   manifest.csv    clip_id,label,superfamily,split,frames
//   frames/<id>.hfrm, or frames/<id>/NNNN.pgm
//   skeleton2d.txt, skeleton3d.txt (when present)
// Existing files are never overwritten.
void write_dataset(const std::string& dir, const StoredDataset& data, FrameStorage storage = FrameStorage::kHfrm);
StoredDataset read_dataset(const std::string& dir);

// Writes `text` to `path`, creating parent directories.
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace hact
