#include "qdbnn/data.hpp"

#include <gtest/gtest.h>

using namespace qdbnn;

namespace {

std::vector<std::uint8_t> gzip_bytes(std::span<const std::uint8_t> bytes) {
    z_stream zs{};
    if (deflateInit2(&zs, Z_BEST_SPEED, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
        throw std::runtime_error("deflateInit failed");
    }
    std::vector<std::uint8_t> out(bytes.size() + 1024);
    zs.next_in = const_cast<Bytef*>(bytes.data());
    zs.avail_in = static_cast<uInt>(bytes.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = deflate(&zs, Z_FINISH);
    if (rc != Z_STREAM_END) throw std::runtime_error("deflate failed");
    out.resize(out.size() - zs.avail_out);
    deflateEnd(&zs);
    return out;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("qdbnn_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

/// Writes a miniature two-split dataset into a directory acting as mirror.
void write_fake_dataset(const fs::path& mirror, std::map<std::string, std::string>* manifest) {
    Rng rng(5);
    auto make_split = [&](int count, const std::string& img_name, const std::string& lab_name) {
        IdxTensor images;
        images.magic = kIdxMagicImages;
        images.dims = {static_cast<std::uint32_t>(count), 4, 4};
        images.data.resize(count * 16);
        for (auto& b : images.data) b = static_cast<std::uint8_t>(rng.uniform_int(256));
        IdxTensor labels;
        labels.magic = kIdxMagicLabels;
        labels.dims = {static_cast<std::uint32_t>(count)};
        labels.data.resize(count);
        for (auto& b : labels.data) b = static_cast<std::uint8_t>(rng.uniform_int(10));
        for (const auto& [tensor, name] : {std::pair{&images, img_name}, std::pair{&labels, lab_name}}) {
            const auto gz = gzip_bytes(serialize_idx(*tensor));
            write_file_atomic(mirror / name, gz);
            (*manifest)[name] = sha256_hex(gz);
        }
    };
    make_split(12, "train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz");
    make_split(6, "t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz");
}

}  // namespace

TEST(Idx, HandBuiltImageDecodes) {
    // 1 image of 2x2 pixels (0, 128, 255, 7)
    const std::vector<std::uint8_t> bytes{0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 128, 255, 7};
    const IdxTensor t = parse_idx(bytes);
    EXPECT_EQ(t.magic, kIdxMagicImages);
    ASSERT_EQ(t.dims.size(), 3u);
    EXPECT_EQ(t.dims[0], 1u);
    EXPECT_EQ(t.dims[1], 2u);
    EXPECT_EQ(t.dims[2], 2u);
    EXPECT_EQ(t.data, (std::vector<std::uint8_t>{0, 128, 255, 7}));
}

TEST(Idx, HandBuiltLabelsDecode) {
    const std::vector<std::uint8_t> bytes{0, 0, 8, 1, 0, 0, 0, 3, 0, 5, 9};
    const IdxTensor t = parse_idx(bytes);
    EXPECT_EQ(t.magic, kIdxMagicLabels);
    EXPECT_EQ(t.data, (std::vector<std::uint8_t>{0, 5, 9}));
}

TEST(Idx, RejectsBadMagicAndTruncation) {
    const std::vector<std::uint8_t> bad_magic{1, 0, 8, 1, 0, 0, 0, 1, 7};
    EXPECT_THROW(parse_idx(bad_magic), IdxParseError);
    const std::vector<std::uint8_t> truncated{0, 0, 8, 1, 0, 0, 0, 5, 1, 2};
    try {
        parse_idx(truncated);
        FAIL() << "expected IdxParseError";
    } catch (const IdxParseError& e) {
        EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
    }
}

TEST(Idx, SerializeParseRoundTrip) {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        IdxTensor t;
        t.dims.resize(1 + rng.uniform_int(3));
        std::size_t total = 1;
        for (auto& d : t.dims) {
            d = static_cast<std::uint32_t>(1 + rng.uniform_int(5));
            total *= d;
        }
        t.magic = 0x00000800u | static_cast<std::uint32_t>(t.dims.size());
        t.data.resize(total);
        for (auto& b : t.data) b = static_cast<std::uint8_t>(rng.uniform_int(256));
        const IdxTensor back = parse_idx(serialize_idx(t));
        EXPECT_EQ(back.dims, t.dims);
        EXPECT_EQ(back.data, t.data);
    }
}

TEST(Preprocess, PixelMappings) {
    RawDataset raw;
    raw.count = 1;
    raw.rows = 1;
    raw.cols = 3;
    raw.images = {0, 255, 128};
    raw.labels = {4};
    const ProbDataset bin = preprocess(raw, PreprocessMode::binarize);
    EXPECT_EQ(bin.values[0], 0.0f);
    EXPECT_EQ(bin.values[1], 1.0f);
    EXPECT_EQ(bin.values[2], 1.0f);  // 128/255 > 0.5
    const ProbDataset norm = preprocess(raw, PreprocessMode::normalize);
    EXPECT_EQ(norm.values[0], 0.0f);
    EXPECT_EQ(norm.values[1], 1.0f);
    EXPECT_NEAR(norm.values[2], 128.0 / 255.0, 1e-7);
}

TEST(Preprocess, BinarizeIsIdempotent) {
    Rng rng(7);
    RawDataset raw;
    raw.count = 2;
    raw.rows = 3;
    raw.cols = 3;
    raw.images.resize(18);
    for (auto& b : raw.images) b = static_cast<std::uint8_t>(rng.uniform_int(256));
    raw.labels = {0, 1};
    const ProbDataset once = preprocess(raw, PreprocessMode::binarize);
    RawDataset again;
    again.count = 2;
    again.rows = 3;
    again.cols = 3;
    again.labels = raw.labels;
    again.images.resize(18);
    for (int i = 0; i < 18; ++i) again.images[i] = static_cast<std::uint8_t>(once.values[i] * 255.0f);
    const ProbDataset twice = preprocess(again, PreprocessMode::binarize);
    EXPECT_EQ(once.values, twice.values);
}

TEST(GzipSha, RoundTripAndDigest) {
    Rng rng(8);
    std::vector<std::uint8_t> payload(5000);
    for (auto& b : payload) b = static_cast<std::uint8_t>(rng.uniform_int(256));
    const auto gz = gzip_bytes(payload);
    EXPECT_EQ(gunzip_bytes(gz), payload);
    // pinned digest of a fixed string
    const std::string abc = "abc";
    const std::vector<std::uint8_t> abc_bytes(abc.begin(), abc.end());
    EXPECT_EQ(sha256_hex(abc_bytes), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(FetchDataset, FileMirrorFetchVerifiesAndCaches) {
    TempDir mirror("mirror");
    TempDir cache("cache");
    DatasetFiles files = mnist_files();
    files.name = "fake";
    files.mirrors = {"file://" + mirror.path.string() + "/"};
    std::map<std::string, std::string> manifest;
    write_fake_dataset(mirror.path, &manifest);
    files.sha256 = manifest;
    const DatasetPair pair = fetch_dataset(files, cache.path);
    EXPECT_EQ(pair.train.count, 12);
    EXPECT_EQ(pair.test.count, 6);
    EXPECT_EQ(pair.train.rows, 4);
    EXPECT_TRUE(fs::exists(cache.path / "fake" / "verified"));
    // second fetch must not touch the network: break the mirror and repeat
    files.mirrors = {"file:///nonexistent/"};
    const DatasetPair again = fetch_dataset(files, cache.path, /*allow_network=*/false);
    EXPECT_EQ(again.train.count, 12);
}

TEST(FetchDataset, CorruptedCacheFailsClosed) {
    TempDir mirror("mirror2");
    TempDir cache("cache2");
    DatasetFiles files = mnist_files();
    files.name = "fake";
    files.mirrors = {"file://" + mirror.path.string() + "/"};
    std::map<std::string, std::string> manifest;
    write_fake_dataset(mirror.path, &manifest);
    files.sha256 = manifest;
    // pre-populate the cache with a corrupted gz and no verified marker
    auto gz = read_file_bytes(mirror.path / "train-images-idx3-ubyte.gz");
    gz[10] ^= 0xff;
    write_file_atomic(cache.path / "fake" / "train-images-idx3-ubyte.gz", gz);
    EXPECT_THROW(fetch_dataset(files, cache.path), DataError);
}

TEST(FetchDataset, AllMirrorsFailingNamesCachePath) {
    TempDir cache("cache3");
    DatasetFiles files = mnist_files();
    files.name = "fake";
    files.mirrors = {"file:///nope/a/", "file:///nope/b/"};
    try {
        fetch_dataset(files, cache.path);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("fake"), std::string::npos);
        EXPECT_NE(msg.find("place the file manually"), std::string::npos);
    }
}

TEST(Synthetic, SeparableAndBalanced) {
    const ProbDataset d = synthetic_dataset(4, 16, 40, 9, 0.0);
    EXPECT_EQ(d.count, 40);
    for (const float v : d.values) EXPECT_TRUE(v == 0.0f || v == 1.0f);
    int counts[4] = {0, 0, 0, 0};
    for (const auto l : d.labels) counts[l]++;
    for (const int c : counts) EXPECT_EQ(c, 10);
}
