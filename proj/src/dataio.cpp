#include "saenet/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "saenet/error.hpp"
#include "saenet/pgm.hpp"

namespace saenet {

int64_t Dataset::max_label() const {
  int64_t m = -1;
  for (int64_t l : labels) m = std::max(m, l);
  return m;
}

void Preproc::validate() const {
  for (double s : std)
    if (!(s > 0.0)) throw ConfigError("preproc: channel std must be positive");
  if (crop_pad < 0) throw ConfigError("preproc: crop_pad must be >= 0");
  if (target_size < 0) throw ConfigError("preproc: target_size must be >= 0");
}

Preproc cifar_train_preproc() {
  Preproc p;
  p.mean = {0.5071, 0.4865, 0.4409};
  p.std = {0.2673, 0.2564, 0.2762};
  p.random_crop = true;
  p.hflip = true;
  return p;
}

Preproc cifar_eval_preproc() {
  Preproc p = cifar_train_preproc();
  p.random_crop = false;
  p.hflip = false;
  return p;
}

namespace {

constexpr int64_t kLabelBytes = 2; // coarse byte + fine byte per record

struct Meta {
  int64_t c = 3, h = 32, w = 32;
  bool present = false;
};

Meta read_meta(const std::filesystem::path& dir) {
  Meta m;
  std::ifstream in(dir / "meta.csv");
  if (!in) return m;
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  if (header != "c,h,w")
    throw FormatError("meta.csv in " + dir.string() + " has header '" + header +
                      "', expected 'c,h,w'");
  char comma;
  std::istringstream fields(row);
  if (!(fields >> m.c >> comma >> m.h >> comma >> m.w) || m.c <= 0 || m.h <= 0 || m.w <= 0)
    throw FormatError("meta.csv in " + dir.string() + " has bad dimensions row '" + row + "'");
  m.present = true;
  return m;
}

} // namespace

Dataset load_cifar_bin(const std::string& path, int64_t expected_n, const std::string& split) {
  Meta meta = read_meta(std::filesystem::path(path).parent_path());
  Dataset ds;
  ds.c = meta.c;
  ds.h = meta.h;
  ds.w = meta.w;
  ds.split = split;

  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + path);
  int64_t size = static_cast<int64_t>(in.tellg());
  in.seekg(0);
  int64_t record = kLabelBytes + ds.image_bytes();
  if (size % record != 0)
    throw FormatError(path + " holds " + std::to_string(size) +
                      " bytes, not a multiple of the record size " + std::to_string(record));
  ds.n = size / record;
  if (expected_n >= 0 && ds.n != expected_n)
    throw FormatError(path + " holds " + std::to_string(size) + " bytes (" +
                      std::to_string(ds.n) + " records), expected " + std::to_string(expected_n) +
                      " records (" + std::to_string(expected_n * record) + " bytes)");

  ds.images.resize(ds.n * ds.image_bytes());
  ds.labels.resize(ds.n);
  std::vector<char> rec(record);
  for (int64_t i = 0; i < ds.n; ++i) {
    in.read(rec.data(), record);
    if (in.gcount() != record) throw IoError(path + ": short read at record " + std::to_string(i));
    ds.labels[i] = static_cast<uint8_t>(rec[1]);
    std::copy(rec.begin() + kLabelBytes, rec.end(),
              reinterpret_cast<char*>(ds.images.data() + i * ds.image_bytes()));
  }
  return ds;
}

void write_cifar_bin(const std::string& path, const Dataset& ds) {
  if (static_cast<int64_t>(ds.labels.size()) != ds.n ||
      static_cast<int64_t>(ds.images.size()) != ds.n * ds.image_bytes())
    throw DimensionError("dataset buffers do not match n=" + std::to_string(ds.n));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (int64_t i = 0; i < ds.n; ++i) {
    if (ds.labels[i] < 0 || ds.labels[i] > 255)
      throw DataError("label " + std::to_string(ds.labels[i]) + " at record " +
                      std::to_string(i) + " does not fit one byte");
    char head[kLabelBytes] = {0, static_cast<char>(ds.labels[i])};
    out.write(head, kLabelBytes);
    out.write(reinterpret_cast<const char*>(ds.image_ptr(i)),
              static_cast<std::streamsize>(ds.image_bytes()));
  }
  if (!out) throw IoError("short write to " + path);

  // The sidecar both records geometry and marks the directory as a generated
  // corpus, which load_cifar100 takes as licence to accept any record count.
  auto dir = std::filesystem::path(path).parent_path();
  std::ofstream meta(dir / "meta.csv");
  meta << "c,h,w\n" << ds.c << "," << ds.h << "," << ds.w << "\n";
}

std::pair<Dataset, Dataset> load_cifar100(const std::string& dir) {
  bool generated = read_meta(dir).present;
  Dataset train = load_cifar_bin(dir + "/train.bin", generated ? -1 : 50000, "train");
  Dataset test = load_cifar_bin(dir + "/test.bin", generated ? -1 : 10000, "test");
  for (const Dataset* ds : {&train, &test})
    for (int64_t i = 0; i < ds->n; ++i)
      if (ds->labels[i] >= 100)
        throw FormatError(dir + "/" + ds->split + ".bin: fine label " +
                          std::to_string(ds->labels[i]) + " at record " + std::to_string(i) +
                          " is outside [0, 100)");
  return {std::move(train), std::move(test)};
}

Dataset synthetic_dataset(int64_t classes, int64_t per_class, std::array<int64_t, 3> chw,
                          uint64_t seed, int64_t noise) {
  if (classes < 2) throw ConfigError("synthetic_dataset needs at least 2 classes");
  if (per_class < 1) throw ConfigError("synthetic_dataset needs at least 1 sample per class");
  if (noise < 0) throw ConfigError("synthetic_dataset noise must be >= 0");
  Dataset ds;
  ds.c = chw[0];
  ds.h = chw[1];
  ds.w = chw[2];
  ds.n = classes * per_class;
  ds.split = "synthetic";
  ds.images.resize(ds.n * ds.image_bytes());
  ds.labels.resize(ds.n);
  Rng rng(seed);
  int64_t i = 0;
  for (int64_t k = 0; k < classes; ++k) {
    int64_t level = std::llround(255.0 * k / (classes - 1));
    for (int64_t m = 0; m < per_class; ++m, ++i) {
      ds.labels[i] = k;
      uint8_t* px = ds.images.data() + i * ds.image_bytes();
      for (int64_t j = 0; j < ds.image_bytes(); ++j) {
        int64_t v = level;
        if (noise > 0) v += static_cast<int64_t>(rng.below(2 * noise + 1)) - noise;
        px[j] = static_cast<uint8_t>(std::clamp<int64_t>(v, 0, 255));
      }
    }
  }
  return ds;
}

template <typename T>
void hflip_chw(T* image, int64_t c, int64_t h, int64_t w) {
  for (int64_t cc = 0; cc < c; ++cc)
    for (int64_t y = 0; y < h; ++y) {
      T* row = image + (cc * h + y) * w;
      std::reverse(row, row + w);
    }
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& nchw, int64_t out_h, int64_t out_w) {
  if (nchw.rank() != 4)
    throw DimensionError("bilinear_resize expects NCHW, got " + shape_str(nchw.shape()));
  if (out_h <= 0 || out_w <= 0) throw DimensionError("bilinear_resize target must be positive");
  int64_t n = nchw.dim(0), c = nchw.dim(1), in_h = nchw.dim(2), in_w = nchw.dim(3);
  Tensor<T> out({n, c, out_h, out_w});
  double sy = double(in_h) / double(out_h);
  double sx = double(in_w) / double(out_w);
  for (int64_t b = 0; b < n; ++b)
    for (int64_t cc = 0; cc < c; ++cc) {
      const T* src = nchw.data() + (b * c + cc) * in_h * in_w;
      T* dst = out.data() + (b * c + cc) * out_h * out_w;
      for (int64_t oy = 0; oy < out_h; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        int64_t y0 = static_cast<int64_t>(std::floor(fy));
        double wy = fy - y0;
        int64_t y0c = std::clamp<int64_t>(y0, 0, in_h - 1);
        int64_t y1c = std::clamp<int64_t>(y0 + 1, 0, in_h - 1);
        for (int64_t ox = 0; ox < out_w; ++ox) {
          double fx = (ox + 0.5) * sx - 0.5;
          int64_t x0 = static_cast<int64_t>(std::floor(fx));
          double wx = fx - x0;
          int64_t x0c = std::clamp<int64_t>(x0, 0, in_w - 1);
          int64_t x1c = std::clamp<int64_t>(x0 + 1, 0, in_w - 1);
          double top = (1.0 - wx) * src[y0c * in_w + x0c] + wx * src[y0c * in_w + x1c];
          double bot = (1.0 - wx) * src[y1c * in_w + x0c] + wx * src[y1c * in_w + x1c];
          dst[oy * out_w + ox] = static_cast<T>((1.0 - wy) * top + wy * bot);
        }
      }
    }
  return out;
}

Dataset load_pgm_folder(const std::string& dir) {
  std::ifstream csv(std::filesystem::path(dir) / "labels.csv");
  if (!csv) throw IoError("cannot open " + dir + "/labels.csv");
  std::string line;
  std::getline(csv, line);
  if (line != "filename,label")
    throw FormatError(dir + "/labels.csv: header is '" + line + "', expected 'filename,label'");

  Dataset ds;
  ds.split = "folder";
  ds.n = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    size_t comma = line.rfind(',');
    if (comma == std::string::npos)
      throw FormatError(dir + "/labels.csv: row '" + line + "' has no comma");
    std::string fname = line.substr(0, comma);
    int64_t label;
    try {
      size_t pos = 0;
      label = std::stoll(line.substr(comma + 1), &pos);
      if (pos != line.size() - comma - 1 || label < 0) throw std::invalid_argument(line);
    } catch (const std::exception&) {
      throw FormatError(dir + "/labels.csv: bad label in row '" + line + "'");
    }
    PgmImage img = read_pgm((std::filesystem::path(dir) / fname).string());
    if (ds.n == 0) {
      ds.h = img.height;
      ds.w = img.width;
    } else if (img.height != ds.h || img.width != ds.w) {
      throw FormatError(dir + "/" + fname + " is " + std::to_string(img.width) + "x" +
                        std::to_string(img.height) + ", expected " + std::to_string(ds.w) + "x" +
                        std::to_string(ds.h));
    }
    for (int64_t cc = 0; cc < 3; ++cc)
      ds.images.insert(ds.images.end(), img.pixels.begin(), img.pixels.end());
    ds.labels.push_back(label);
    ds.n += 1;
  }
  if (ds.n == 0) throw DataError(dir + "/labels.csv lists no images");
  return ds;
}

template <typename T>
BatchStream<T>::BatchStream(const Dataset& ds, int64_t batch_size, uint64_t epoch_seed,
                            const Preproc& preproc, bool train)
    : ds_(&ds), batch_size_(batch_size), preproc_(preproc), train_(train), rng_(epoch_seed) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  preproc.validate();
  order_.resize(ds.n);
  for (int64_t i = 0; i < ds.n; ++i) order_[i] = i;
  if (train_) rng_.shuffle(order_);
}

template <typename T>
int64_t BatchStream<T>::num_batches() const {
  return (ds_->n + batch_size_ - 1) / batch_size_;
}

template <typename T>
bool BatchStream<T>::next(Batch<T>& out) {
  if (cursor_ >= ds_->n) return false;
  int64_t b = std::min(batch_size_, ds_->n - cursor_);
  int64_t c = ds_->c, h = ds_->h, w = ds_->w;
  bool resize = preproc_.target_size > 0 && (preproc_.target_size != h || preproc_.target_size != w);
  int64_t oh = resize ? preproc_.target_size : h;
  int64_t ow = resize ? preproc_.target_size : w;

  out.images = Tensor<T>({b, c, oh, ow});
  out.labels.assign(b, 0);
  out.indices.assign(b, 0);

  std::vector<T> sample(static_cast<size_t>(c * h * w));
  for (int64_t i = 0; i < b; ++i) {
    int64_t row = order_[cursor_ + i];
    out.labels[i] = ds_->labels[row];
    out.indices[i] = row;
    const uint8_t* px = ds_->image_ptr(row);

    if (train_ && preproc_.random_crop && preproc_.crop_pad > 0) {
      int64_t p = preproc_.crop_pad;
      int64_t dy = static_cast<int64_t>(rng_.below(2 * p + 1)) - p;
      int64_t dx = static_cast<int64_t>(rng_.below(2 * p + 1)) - p;
      for (int64_t cc = 0; cc < c; ++cc)
        for (int64_t y = 0; y < h; ++y)
          for (int64_t x = 0; x < w; ++x) {
            int64_t sy = y + dy, sx = x + dx;
            bool inside = sy >= 0 && sy < h && sx >= 0 && sx < w;
            sample[(cc * h + y) * w + x] =
                inside ? T(px[(cc * h + sy) * w + sx]) / T(255) : T(0);
          }
    } else {
      for (size_t j = 0; j < sample.size(); ++j) sample[j] = T(px[j]) / T(255);
    }
    if (train_ && preproc_.hflip && rng_.below(2) == 1) hflip_chw(sample.data(), c, h, w);

    if (resize) {
      Tensor<T> one({1, c, h, w}, sample);
      Tensor<T> big = bilinear_resize(one, oh, ow);
      for (int64_t cc = 0; cc < c; ++cc) {
        size_t ch_idx = static_cast<size_t>(std::min<int64_t>(cc, 2));
        T mean = T(preproc_.mean[ch_idx]), stdv = T(preproc_.std[ch_idx]);
        for (int64_t j = 0; j < oh * ow; ++j)
          out.images[out.images.offset4(i, cc, j / ow, j % ow)] =
              (big[big.offset4(0, cc, j / ow, j % ow)] - mean) / stdv;
      }
    } else {
      for (int64_t cc = 0; cc < c; ++cc) {
        size_t ch_idx = static_cast<size_t>(std::min<int64_t>(cc, 2));
        T mean = T(preproc_.mean[ch_idx]), stdv = T(preproc_.std[ch_idx]);
        for (int64_t j = 0; j < h * w; ++j)
          out.images[out.images.offset4(i, cc, j / w, j % w)] =
              (sample[cc * h * w + j] - mean) / stdv;
      }
    }
  }
  cursor_ += b;
  return true;
}

#define SAENET_INSTANTIATE_DATAIO(T)                                              \
  template void hflip_chw<T>(T*, int64_t, int64_t, int64_t);                      \
  template Tensor<T> bilinear_resize<T>(const Tensor<T>&, int64_t, int64_t);      \
  template struct Batch<T>;                                                       \
  template class BatchStream<T>;

SAENET_INSTANTIATE_DATAIO(float)
SAENET_INSTANTIATE_DATAIO(double)

} // namespace saenet
