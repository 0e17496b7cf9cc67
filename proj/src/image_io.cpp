#include <cctype>
#include <fstream>

#include "secap/data.hpp"
#include "secap/errors.hpp"
#include "secap/rten.hpp"

namespace secap {

namespace {

std::size_t ppm_field(std::istream& in, const std::string& file) {
  int ch = in.get();
  for (;;) {
    while (ch != EOF && std::isspace(ch)) ch = in.get();
    if (ch != '#') break;
    while (ch != EOF && ch != '\n') ch = in.get();
  }
  if (ch == EOF || !std::isdigit(ch)) throw IoError("malformed PPM header in " + file);
  std::size_t v = 0;
  while (ch != EOF && std::isdigit(ch)) {
    v = v * 10 + static_cast<std::size_t>(ch - '0');
    ch = in.get();
  }
  // Exactly one whitespace byte separates the header from the raster.
  if (ch == EOF || !std::isspace(ch)) throw IoError("malformed PPM header in " + file);
  return v;
}

}  // namespace

Tensor<float> read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  char magic[2] = {};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '6') throw IoError(path.string() + " is not a binary P6 PPM");
  const std::size_t w = ppm_field(in, path.string());
  const std::size_t h = ppm_field(in, path.string());
  const std::size_t maxval = ppm_field(in, path.string());
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw IoError("bad PPM dimensions in " + path.string());
  const std::size_t bytes = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> raster(w * h * 3 * bytes);
  in.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (!in) throw IoError("truncated PPM raster in " + path.string());

  Tensor<float> out({3, h, w});
  auto dst = out.data();
  for (std::size_t i = 0; i < w * h; ++i)
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const std::size_t at = (i * 3 + ch) * bytes;
      const std::size_t v = bytes == 1 ? raster[at] : (std::size_t{raster[at]} << 8) | raster[at + 1];
      dst[ch * w * h + i] = static_cast<float>(static_cast<double>(v) / static_cast<double>(maxval));
    }
  return out;
}

Tensor<float> load_image(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".ppm") return read_ppm(path);
  if (ext == ".rten") {
    auto t = read_rten<float>(path);
    if (t.rank() != 3) throw IoError(path.string() + ": image tensors must be [C,H,W], got " + shape_str(t.shape()));
    return t;
  }
  throw IoError("unsupported image format '" + ext + "' for " + path.string());
}

const Tensor<float>& ImageCache::get(const SampleRecord& record) {
  auto it = images_.find(record.path);
  if (it == images_.end()) it = images_.emplace(record.path, load_image(root_ / record.path)).first;
  return it->second;
}

}  // namespace secap
