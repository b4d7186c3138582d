#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "oracles.hpp"
#include "saenet/dataio.hpp"
#include "saenet/pgm.hpp"

using namespace saenet;

namespace {

std::filesystem::path fresh_dir(const std::string& leaf) {
  auto dir = std::filesystem::temp_directory_path() / leaf;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void write_sparse(const std::filesystem::path& path, int64_t bytes) {
  std::ofstream out(path, std::ios::binary);
  out.seekp(bytes - 1);
  out.put(0);
}

} // namespace

TEST_CASE("synthetic corpus") {
  Dataset ds = synthetic_dataset(8, 32, {3, 16, 16}, 42);
  CHECK(ds.n == 256);
  CHECK(ds.image_bytes() == 3 * 16 * 16);

  std::map<int64_t, int64_t> counts;
  for (int64_t l : ds.labels) counts[l]++;
  REQUIRE(counts.size() == 8);
  for (const auto& [label, n] : counts) {
    CAPTURE(label);
    CHECK(n == 32);
  }

  SUBCASE("fixed seed reproduces, another seed does not") {
    Dataset again = synthetic_dataset(8, 32, {3, 16, 16}, 42);
    CHECK(again.images == ds.images);
    CHECK(again.labels == ds.labels);
    Dataset other = synthetic_dataset(8, 32, {3, 16, 16}, 43);
    CHECK(other.images != ds.images);
  }

  SUBCASE("zero noise is nearest-template separable") {
    Dataset clean = synthetic_dataset(8, 4, {3, 8, 8}, 1, 0);
    for (int64_t i = 0; i < clean.n; ++i) {
      const uint8_t* px = clean.image_ptr(i);
      int64_t best = -1, best_cost = INT64_MAX;
      for (int64_t k = 0; k < 8; ++k) {
        int64_t level = std::llround(255.0 * k / 7);
        int64_t cost = 0;
        for (int64_t j = 0; j < clean.image_bytes(); ++j)
          cost += std::abs(int64_t(px[j]) - level);
        if (cost < best_cost) {
          best_cost = cost;
          best = k;
        }
      }
      CHECK(best == clean.labels[i]);
    }
  }

  SUBCASE("rejects degenerate requests") {
    CHECK_THROWS_AS(synthetic_dataset(1, 4, {3, 8, 8}, 1), ConfigError);
    CHECK_THROWS_AS(synthetic_dataset(4, 0, {3, 8, 8}, 1), ConfigError);
  }
}

TEST_CASE("bin round trip") {
  auto dir = fresh_dir("saenet-bin-test");
  Dataset ds = synthetic_dataset(3, 2, {3, 8, 8}, 5);
  ds.labels[4] = 97; // exercise a non-contiguous label value
  write_cifar_bin((dir / "train.bin").string(), ds);

  Dataset back = load_cifar_bin((dir / "train.bin").string(), -1, "train");
  CHECK(back.n == 6);
  CHECK(back.c == 3);
  CHECK(back.h == 8);
  CHECK(back.w == 8);
  CHECK(back.labels == ds.labels);
  CHECK(back.images == ds.images);

  SUBCASE("record count is enforced when requested") {
    CHECK_THROWS_WITH_AS(load_cifar_bin((dir / "train.bin").string(), 99, "train"),
                         doctest::Contains("expected 99 records"), FormatError);
  }
  SUBCASE("truncation is reported with byte counts") {
    auto size = std::filesystem::file_size(dir / "train.bin");
    std::filesystem::resize_file(dir / "train.bin", size - 1);
    CHECK_THROWS_WITH_AS(load_cifar_bin((dir / "train.bin").string(), -1, "train"),
                         doctest::Contains("not a multiple of the record size"), FormatError);
  }
}

TEST_CASE("cifar100 directory loading") {
  SUBCASE("standard splits demand the standard counts") {
    auto dir = fresh_dir("saenet-cifar-test");
    write_sparse(dir / "train.bin", 50000 * 3074);
    write_sparse(dir / "test.bin", 10000 * 3074);
    auto [train, test] = load_cifar100(dir.string());
    CHECK(train.n == 50000);
    CHECK(test.n == 10000);
    CHECK(train.max_label() == 0);
    CHECK(train.split == "train");
    CHECK(test.split == "test");

    std::filesystem::resize_file(dir / "test.bin", 9999 * 3074);
    CHECK_THROWS_WITH_AS(load_cifar100(dir.string()), doctest::Contains("expected 10000 records"),
                         FormatError);
  }
  SUBCASE("a generated corpus may be any size") {
    auto dir = fresh_dir("saenet-cifar-gen-test");
    write_cifar_bin((dir / "train.bin").string(), synthetic_dataset(8, 4, {3, 32, 32}, 7));
    write_cifar_bin((dir / "test.bin").string(), synthetic_dataset(8, 2, {3, 32, 32}, 8));
    auto [train, test] = load_cifar100(dir.string());
    CHECK(train.n == 32);
    CHECK(test.n == 16);
  }
  SUBCASE("fine labels beyond 99 are rejected") {
    auto dir = fresh_dir("saenet-cifar-bad-test");
    Dataset ds = synthetic_dataset(8, 2, {3, 32, 32}, 7);
    ds.labels[3] = 137;
    write_cifar_bin((dir / "train.bin").string(), ds);
    write_cifar_bin((dir / "test.bin").string(), synthetic_dataset(8, 2, {3, 32, 32}, 8));
    CHECK_THROWS_WITH_AS(load_cifar100(dir.string()), doctest::Contains("fine label 137"),
                         FormatError);
  }
}

TEST_CASE("batch stream") {
  Dataset ds = synthetic_dataset(5, 2, {3, 6, 6}, 11); // n = 10
  Preproc plain;

  SUBCASE("partial final batch") {
    BatchStream<float> stream(ds, 4, 0, plain, true);
    CHECK(stream.num_batches() == 3);
    Batch<float> b;
    std::vector<int64_t> sizes, seen;
    while (stream.next(b)) {
      sizes.push_back(b.images.dim(0));
      seen.insert(seen.end(), b.indices.begin(), b.indices.end());
    }
    CHECK(sizes == std::vector<int64_t>{4, 4, 2});
    std::sort(seen.begin(), seen.end());
    CHECK(seen == std::vector<int64_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  }

  SUBCASE("oversized batch covers the dataset") {
    BatchStream<float> stream(ds, 64, 0, plain, false);
    CHECK(stream.num_batches() == 1);
    Batch<float> b;
    REQUIRE(stream.next(b));
    CHECK(b.images.dim(0) == 10);
    CHECK_FALSE(stream.next(b));
  }

  SUBCASE("eval order is the dataset order, twice over") {
    BatchStream<float> s1(ds, 3, 1, plain, false), s2(ds, 3, 99, plain, false);
    Batch<float> b1, b2;
    std::vector<int64_t> order;
    while (s1.next(b1)) {
      REQUIRE(s2.next(b2));
      CHECK(b1.labels == b2.labels);
      CHECK(oracle::max_abs_diff(b1.images, b2.images) == 0.0);
      order.insert(order.end(), b1.indices.begin(), b1.indices.end());
    }
    CHECK(order == std::vector<int64_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  }

  SUBCASE("train epochs reshuffle deterministically") {
    auto epoch_order = [&](uint64_t seed) {
      BatchStream<float> s(ds, 4, seed, plain, true);
      Batch<float> b;
      std::vector<int64_t> order;
      while (s.next(b)) order.insert(order.end(), b.indices.begin(), b.indices.end());
      return order;
    };
    CHECK(epoch_order(3) == epoch_order(3));
    CHECK(epoch_order(3) != epoch_order(4));
    CHECK(epoch_order(3) != std::vector<int64_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  }

  SUBCASE("augmented training batches stay inside the normalization bounds") {
    Dataset cifarish = synthetic_dataset(4, 8, {3, 32, 32}, 13);
    Preproc aug = cifar_train_preproc();
    double max_mean = *std::max_element(aug.mean.begin(), aug.mean.end());
    double min_mean = *std::min_element(aug.mean.begin(), aug.mean.end());
    double min_std = *std::min_element(aug.std.begin(), aug.std.end());
    double lo = (0.0 - max_mean) / min_std, hi = (1.0 - min_mean) / min_std;
    BatchStream<float> stream(cifarish, 8, 2, aug, true);
    Batch<float> b;
    while (stream.next(b)) {
      REQUIRE(b.images.all_finite());
      for (int64_t i = 0; i < b.images.numel(); ++i) {
        REQUIRE(b.images[i] >= float(lo));
        REQUIRE(b.images[i] <= float(hi));
      }
    }
  }

  SUBCASE("target_size rescales the batch") {
    Preproc up;
    up.target_size = 8;
    BatchStream<float> stream(ds, 4, 0, up, false);
    Batch<float> b;
    REQUIRE(stream.next(b));
    CHECK(b.images.shape() == Shape{4, 3, 8, 8});
  }

  SUBCASE("bad arguments are rejected") {
    CHECK_THROWS_AS(BatchStream<float>(ds, 0, 0, plain, true), ConfigError);
    Preproc bad;
    bad.std = {0.0, 1.0, 1.0};
    CHECK_THROWS_AS(BatchStream<float>(ds, 4, 0, bad, true), ConfigError);
  }
}

TEST_CASE("horizontal flip") {
  std::vector<double> row = {1, 2, 3};
  hflip_chw(row.data(), 1, 1, 3);
  CHECK(row == std::vector<double>{3, 2, 1});

  Rng rng(17);
  Tensor<double> img = oracle::random_tensor<double>({2, 4, 5}, rng);
  Tensor<double> twice = img.clone();
  hflip_chw(twice.data(), 2, 4, 5);
  hflip_chw(twice.data(), 2, 4, 5);
  CHECK(oracle::max_abs_diff(img, twice) == 0.0);
}

TEST_CASE("bilinear resize") {
  SUBCASE("2x2 to 4x4 against hand-worked weights") {
    Tensor<double> src({1, 1, 2, 2}, {0, 1, 2, 3});
    Tensor<double> out = bilinear_resize(src, 4, 4);
    // Sample centers map to source offsets -0.25, 0.25, 0.75, 1.25; edge
    // clamping makes the outer rows/columns copies of the boundary.
    std::vector<double> expected = {
        0.0,  0.25, 0.75, 1.0,  //
        0.5,  0.75, 1.25, 1.5,  //
        1.5,  1.75, 2.25, 2.5,  //
        2.0,  2.25, 2.75, 3.0,
    };
    for (int64_t i = 0; i < 16; ++i) CHECK(out[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
  SUBCASE("constant images stay constant") {
    Tensor<float> src = Tensor<float>::full({2, 3, 32, 32}, 0.5f);
    Tensor<float> out = bilinear_resize(src, 224, 224);
    for (int64_t i = 0; i < out.numel(); ++i) REQUIRE(out[i] == doctest::Approx(0.5f));
  }
  SUBCASE("identity size is a copy") {
    Rng rng(23);
    Tensor<double> src = oracle::random_tensor<double>({1, 2, 5, 7}, rng);
    Tensor<double> out = bilinear_resize(src, 5, 7);
    CHECK(oracle::max_abs_diff(src, out) == 0.0);
  }
  SUBCASE("rank and size checks") {
    Tensor<double> bad({2, 3, 4});
    CHECK_THROWS_AS(bilinear_resize(bad, 4, 4), DimensionError);
    Tensor<double> ok({1, 1, 2, 2});
    CHECK_THROWS_AS(bilinear_resize(ok, 0, 4), DimensionError);
  }
}

TEST_CASE("pgm folder ingestion") {
  auto dir = fresh_dir("saenet-folder-test");
  PgmImage a{2, 2, {10, 20, 30, 40}};
  PgmImage b{2, 2, {5, 6, 7, 8}};
  write_pgm((dir / "one.pgm").string(), a);
  write_pgm((dir / "two.pgm").string(), b);
  {
    std::ofstream csv(dir / "labels.csv");
    csv << "filename,label\none.pgm,3\ntwo.pgm,7\n";
  }

  Dataset ds = load_pgm_folder(dir.string());
  CHECK(ds.n == 2);
  CHECK(ds.c == 3);
  CHECK(ds.h == 2);
  CHECK(ds.w == 2);
  CHECK(ds.labels == std::vector<int64_t>{3, 7});
  // gray plane replicated across the three channels
  for (int64_t cc = 0; cc < 3; ++cc)
    for (int64_t j = 0; j < 4; ++j) CHECK(ds.image_ptr(0)[cc * 4 + j] == a.pixels[j]);

  SUBCASE("bad header") {
    std::ofstream csv(dir / "labels.csv");
    csv << "file,cls\none.pgm,3\n";
    csv.close();
    CHECK_THROWS_WITH_AS(load_pgm_folder(dir.string()), doctest::Contains("filename,label"),
                         FormatError);
  }
  SUBCASE("bad label") {
    std::ofstream csv(dir / "labels.csv");
    csv << "filename,label\none.pgm,x\n";
    csv.close();
    CHECK_THROWS_AS(load_pgm_folder(dir.string()), FormatError);
  }
  SUBCASE("missing image file") {
    std::ofstream csv(dir / "labels.csv");
    csv << "filename,label\nghost.pgm,1\n";
    csv.close();
    CHECK_THROWS_AS(load_pgm_folder(dir.string()), IoError);
  }
  SUBCASE("mismatched dimensions") {
    write_pgm((dir / "wide.pgm").string(), PgmImage{3, 1, {1, 2, 3}});
    std::ofstream csv(dir / "labels.csv");
    csv << "filename,label\none.pgm,1\nwide.pgm,2\n";
    csv.close();
    CHECK_THROWS_WITH_AS(load_pgm_folder(dir.string()), doctest::Contains("expected 2x2"),
                         FormatError);
  }
  SUBCASE("empty listing") {
    std::ofstream csv(dir / "labels.csv");
    csv << "filename,label\n";
    csv.close();
    CHECK_THROWS_AS(load_pgm_folder(dir.string()), DataError);
  }
}
