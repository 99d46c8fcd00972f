#pragma once

#include <curl/curl.h>
#include <openssl/evp.h>
#include <zlib.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qdbnn/idx.hpp"

namespace qdbnn {

namespace fs = std::filesystem;

class DataError : public std::runtime_error {
  public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Bytes, hashing, compression
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

inline void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot write " + tmp.string());
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    fs::rename(tmp, path);
}

inline std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw DataError("sha256 computation failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

inline std::vector<std::uint8_t> gunzip_bytes(std::span<const std::uint8_t> bytes) {
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 32) != Z_OK) throw DataError("inflateInit failed");
    std::vector<std::uint8_t> out;
    out.reserve(bytes.size() * 4);
    std::vector<std::uint8_t> buf(1 << 16);
    zs.next_in = const_cast<Bytef*>(bytes.data());
    zs.avail_in = static_cast<uInt>(bytes.size());
    int ret = Z_OK;
    do {
        zs.next_out = buf.data();
        zs.avail_out = static_cast<uInt>(buf.size());
        ret = inflate(&zs, Z_NO_FLUSH);
        if (ret != Z_OK && ret != Z_STREAM_END) {
            inflateEnd(&zs);
            throw DataError("gzip decompression failed (zlib code " + std::to_string(ret) + ")");
        }
        out.insert(out.end(), buf.data(), buf.data() + (buf.size() - zs.avail_out));
    } while (ret != Z_STREAM_END);
    inflateEnd(&zs);
    return out;
}

// ---------------------------------------------------------------------------
// Download with pinned checksums
// ---------------------------------------------------------------------------

namespace detail {

inline std::size_t curl_sink(char* ptr, std::size_t size, std::size_t nmemb, void* userdata) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(userdata);
    out->insert(out->end(), reinterpret_cast<std::uint8_t*>(ptr), reinterpret_cast<std::uint8_t*>(ptr) + size * nmemb);
    return size * nmemb;
}

}  // namespace detail

/// Fetches a URL (https or file scheme) into memory; nullopt on failure.
inline std::optional<std::vector<std::uint8_t>> fetch_url(const std::string& url, std::string* error) {
    CURL* curl = curl_easy_init();
    if (!curl) {
        if (error) *error = "curl init failed";
        return std::nullopt;
    }
    std::vector<std::uint8_t> body;
    curl_easy_setopt(curl, CURLOPT_URL, url.c_str());
    curl_easy_setopt(curl, CURLOPT_FOLLOWLOCATION, 1L);
    curl_easy_setopt(curl, CURLOPT_WRITEFUNCTION, detail::curl_sink);
    curl_easy_setopt(curl, CURLOPT_WRITEDATA, &body);
    curl_easy_setopt(curl, CURLOPT_FAILONERROR, 1L);
    curl_easy_setopt(curl, CURLOPT_CONNECTTIMEOUT, 15L);
    curl_easy_setopt(curl, CURLOPT_TIMEOUT, 300L);
    const CURLcode rc = curl_easy_perform(curl);
    long http_code = 0;
    curl_easy_getinfo(curl, CURLINFO_RESPONSE_CODE, &http_code);
    curl_easy_cleanup(curl);
    if (rc != CURLE_OK) {
        if (error) *error = std::string(curl_easy_strerror(rc)) + " (http " + std::to_string(http_code) + ")";
        return std::nullopt;
    }
    return body;
}

/// Plain-text manifest: `filename  hexdigest` per line; '#' starts a comment.
inline std::map<std::string, std::string> parse_manifest(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream ls(line);
        std::string name, digest;
        if (ls >> name >> digest) out[name] = digest;
    }
    return out;
}

struct DatasetFiles {
    std::string name;  // cache subdirectory
    std::vector<std::string> gz_files;
    std::map<std::string, std::string> sha256;  // of the gz files
    std::vector<std::string> mirrors;
};

inline DatasetFiles mnist_files() {
    DatasetFiles d;
    d.name = "mnist";
    d.gz_files = {"train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz", "t10k-images-idx3-ubyte.gz",
                  "t10k-labels-idx1-ubyte.gz"};
    d.sha256 = {
        {"train-images-idx3-ubyte.gz", "440fcabf73cc546fa21475e81ea370265605f56be210a4024d2ca8f203523609"},
        {"train-labels-idx1-ubyte.gz", "3552534a0a558bbed6aed32b30c495cca23d567ec52cac8be1a0730e8010255c"},
        {"t10k-images-idx3-ubyte.gz", "8d422c7b0a1c1c79245a5bcf07fe86e33eeafee792b84584aec276f5a2dbc4e6"},
        {"t10k-labels-idx1-ubyte.gz", "f7ae60f92e00ec6debd23a6088c31dbd2371eca3ffa0defaefb259924204aec6"},
    };
    d.mirrors = {"https://storage.googleapis.com/cvdf-datasets/mnist/",
                 "https://ossci-datasets.s3.amazonaws.com/mnist/"};
    return d;
}

inline DatasetFiles fashion_mnist_files() {
    DatasetFiles d;
    d.name = "fashion_mnist";
    d.gz_files = {"train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz", "t10k-images-idx3-ubyte.gz",
                  "t10k-labels-idx1-ubyte.gz"};
    d.sha256 = {
        {"train-images-idx3-ubyte.gz", "3aede38d61863908ad78613f6a32ed271626dd12800ba2636569512369268a84"},
        {"train-labels-idx1-ubyte.gz", "a04f17134ac03560a47e3764e11b92fc97de4d1bfaf8ba1a3aa29af54cc90845"},
        {"t10k-images-idx3-ubyte.gz", "346e55b948d973a97e58d2351dde16a484bd415d4595297633bb08f03db6a073"},
        {"t10k-labels-idx1-ubyte.gz", "67da17c76eaffca5446c3361aaab5c3cd6d1c2608764d35dfb1850b086bf8dd5"},
    };
    d.mirrors = {"http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/"};
    return d;
}

struct RawDataset {
    int count = 0, rows = 0, cols = 0;
    std::vector<std::uint8_t> images;  // count*rows*cols
    std::vector<std::uint8_t> labels;  // count, values 0..9
    std::string split;
};

struct DatasetPair {
    RawDataset train, test;
};

inline fs::path default_cache_dir() {
    if (const char* env = std::getenv("QDBNN_DATA_DIR")) return fs::path(env);
    return fs::path("data-cache");
}

namespace detail {

inline RawDataset raw_from_idx(const IdxTensor& images, const IdxTensor& labels, const std::string& split) {
    if (images.magic != kIdxMagicImages) throw DataError("image file has wrong magic for " + split);
    if (labels.magic != kIdxMagicLabels) throw DataError("label file has wrong magic for " + split);
    QDBNN_REQUIRE(images.dims.size() == 3, "expected rank-3 image tensor");
    RawDataset d;
    d.count = static_cast<int>(images.dims[0]);
    d.rows = static_cast<int>(images.dims[1]);
    d.cols = static_cast<int>(images.dims[2]);
    d.images = images.data;
    d.labels = labels.data;
    d.split = split;
    if (static_cast<int>(labels.dims[0]) != d.count) {
        throw DataError(split + ": image count " + std::to_string(d.count) + " != label count " +
                        std::to_string(labels.dims[0]));
    }
    return d;
}

}  // namespace detail

// Download-if-absent with pinned-checksum verification.  Cache layout:
// <cache>/<name>/<decompressed idx files> plus a `verified` marker; a
// `manifest.sha256` file in that directory overrides the built-in pins.
// Data whose checksum was not verified is never returned.
inline DatasetPair fetch_dataset(const DatasetFiles& files, const fs::path& cache_dir,
                                 bool allow_network = true) {
    const fs::path dir = cache_dir / files.name;
    fs::create_directories(dir);
    std::map<std::string, std::string> manifest = files.sha256;
    if (fs::exists(dir / "manifest.sha256")) {
        const auto bytes = read_file_bytes(dir / "manifest.sha256");
        manifest = parse_manifest(std::string(bytes.begin(), bytes.end()));
    }
    const bool verified = fs::exists(dir / "verified");
    for (const auto& gz : files.gz_files) {
        const std::string plain = gz.substr(0, gz.size() - 3);
        if (verified && fs::exists(dir / plain)) continue;
        std::vector<std::uint8_t> gz_bytes;
        if (fs::exists(dir / gz)) {
            gz_bytes = read_file_bytes(dir / gz);
        } else {
            if (!allow_network) {
                throw DataError("dataset file " + gz + " missing from cache " + dir.string() +
                                " and network fetch is disabled");
            }
            std::string errors;
            for (const auto& mirror : files.mirrors) {
                std::string err;
                auto body = fetch_url(mirror + gz, &err);
                if (body) {
                    gz_bytes = std::move(*body);
                    break;
                }
                errors += "\n  " + mirror + gz + ": " + err;
            }
            if (gz_bytes.empty()) {
                throw DataError("all mirrors failed for " + gz + ":" + errors + "\nplace the file manually under " +
                                dir.string());
            }
            write_file_atomic(dir / gz, gz_bytes);
        }
        const auto it = manifest.find(gz);
        if (it == manifest.end()) throw DataError("no pinned checksum for " + gz);
        const std::string digest = sha256_hex(gz_bytes);
        if (digest != it->second) {
            throw DataError("checksum mismatch for " + (dir / gz).string() + ": got " + digest + ", expected " +
                            it->second);
        }
        write_file_atomic(dir / plain, gunzip_bytes(gz_bytes));
    }
    {
        std::ofstream marker(dir / "verified");
        marker << "all gz checksums verified\n";
    }
    const auto load = [&](const std::string& img, const std::string& lab, const std::string& split) {
        return detail::raw_from_idx(parse_idx(read_file_bytes(dir / img)), parse_idx(read_file_bytes(dir / lab)),
                                    split);
    };
    DatasetPair pair;
    pair.train = load("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "train");
    pair.test = load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", "test");
    return pair;
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

enum class PreprocessMode { binarize, normalize };

inline std::optional<PreprocessMode> parse_preprocess_mode(const std::string& s) {
    if (s == "binarize") return PreprocessMode::binarize;
    if (s == "normalize") return PreprocessMode::normalize;
    return std::nullopt;
}

/// Input-probability dataset; pixels live in [0,1] ({0,1} when binarized).
struct ProbDataset {
    int count = 0, h = 0, w = 0, c = 1;
    std::vector<float> values;
    std::vector<std::uint8_t> labels;

    int input_size() const { return h * w * c; }

    void sample_input(int idx, std::vector<double>& out) const {
        const int n = input_size();
        out.resize(n);
        const float* base = values.data() + std::size_t(idx) * n;
        for (int i = 0; i < n; ++i) out[i] = base[i];
    }
};

/// binarize: pixel -> [pixel/255 > 1/2]; normalize: pixel -> pixel/255.
inline ProbDataset preprocess(const RawDataset& raw, PreprocessMode mode) {
    ProbDataset d;
    d.count = raw.count;
    d.h = raw.rows;
    d.w = raw.cols;
    d.c = 1;
    d.labels = raw.labels;
    d.values.resize(raw.images.size());
    for (std::size_t i = 0; i < raw.images.size(); ++i) {
        const double v = raw.images[i] / 255.0;
        d.values[i] = mode == PreprocessMode::binarize ? (v > 0.5 ? 1.0f : 0.0f) : static_cast<float>(v);
    }
    return d;
}

// ---------------------------------------------------------------------------
// Synthetic data (tests, toy runs, determinism checks)
// ---------------------------------------------------------------------------

// Seeded template-plus-bitflip dataset: one random binary template per
// class, samples flip each bit with `flip_prob`.  flip_prob = 0 gives a
// linearly separable set.  Templates depend only on `seed`; `noise_salt`
// selects the sample-noise stream, so two splits of the same seed share the
// class structure.
inline ProbDataset synthetic_dataset(int n_classes, int dim, int count, std::uint64_t seed, double flip_prob,
                                     std::uint64_t noise_salt = 0) {
    QDBNN_REQUIRE(n_classes >= 2 && dim >= n_classes, "synthetic dataset needs dim >= classes >= 2");
    ProbDataset d;
    d.count = count;
    d.h = dim;
    d.w = 1;
    d.c = 1;
    d.values.resize(std::size_t(count) * dim);
    d.labels.resize(count);
    Rng template_rng(seed ^ 0x5941u);
    std::vector<std::vector<float>> templates(n_classes, std::vector<float>(dim));
    for (int cidx = 0; cidx < n_classes; ++cidx) {
        for (int i = 0; i < dim; ++i) templates[cidx][i] = template_rng.uniform() < 0.5 ? 0.0f : 1.0f;
        // force one always-on block per class so templates never collide
        const int block = dim / n_classes;
        for (int i = 0; i < dim; ++i) {
            const bool mine = i / std::max(1, block) == cidx;
            if (mine) templates[cidx][i] = 1.0f;
        }
    }
    Rng noise_rng = template_rng.fork(noise_salt + 1);
    for (int s = 0; s < count; ++s) {
        const int cidx = s % n_classes;
        d.labels[s] = static_cast<std::uint8_t>(cidx);
        for (int i = 0; i < dim; ++i) {
            float v = templates[cidx][i];
            if (flip_prob > 0.0 && noise_rng.uniform() < flip_prob) v = 1.0f - v;
            d.values[std::size_t(s) * dim + i] = v;
        }
    }
    return d;
}

}  // namespace qdbnn
