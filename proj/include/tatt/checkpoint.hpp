#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <zlib.h>

#include "tatt/losses.hpp"
#include "tatt/network.hpp"
#include "tatt/optim.hpp"

namespace tatt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct TrainConfig {
    double lr = 1e-3;
    std::size_t batch = 16;
    std::size_t steps = 2000;  // total target, including steps already taken when resuming
    double alpha = 1.0;
    double beta = 0.1;
    std::uint64_t seed = 1;
    int precision = 32;
    bool tsc = true;
    bool use_tp = true;
    bool freeze_tpg = false;
    bool fixed_deform = false;
    std::size_t validate_every = 0;
    std::size_t checkpoint_every = 0;

    LossWeights weights() const { return {alpha, beta}; }

    void validate() const {
        if (!(lr > 0)) throw ContractError("TrainConfig: learning rate must be positive");
        if (batch == 0) throw ContractError("TrainConfig: batch size must be positive");
        if (alpha < 0 || beta < 0) throw ContractError("TrainConfig: loss weights must be nonnegative");
        if (precision != 32 && precision != 64) throw ContractError("TrainConfig: precision must be 32 or 64");
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, lr, batch, steps, alpha, beta, seed, precision, tsc, use_tp,
                                                freeze_tpg, fixed_deform, validate_every, checkpoint_every)

template <class T>
struct TrainState {
    NetworkConfig net;
    TrainConfig train;
    std::string phase = "joint";  // "tpg" (prior generator pretraining) or "joint"
    std::uint64_t step = 0;
    Rng rng;
    ParamStore<T> params;
    AdamState<T> adam;
};

inline constexpr char kCheckpointMagic[8] = {'T', 'A', 'T', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
public:
    template <class V>
    void put(const V& v) {
        static_assert(std::is_trivially_copyable_v<V>);
        const auto* p = reinterpret_cast<const unsigned char*>(&v);
        bytes.insert(bytes.end(), p, p + sizeof(V));
    }
    void put_string(const std::string& s) {
        put(static_cast<std::uint32_t>(s.size()));
        bytes.insert(bytes.end(), s.begin(), s.end());
    }
    template <class V>
    void put_array(const std::vector<V>& v) {
        const auto* p = reinterpret_cast<const unsigned char*>(v.data());
        bytes.insert(bytes.end(), p, p + v.size() * sizeof(V));
    }
    std::vector<unsigned char> bytes;
};

class ByteReader {
public:
    ByteReader(const std::vector<unsigned char>& b, std::size_t end, std::string source)
        : b_(b), end_(end), source_(std::move(source)) {}

    template <class V>
    V get(const char* what) {
        need(sizeof(V), what);
        V v;
        std::memcpy(&v, b_.data() + pos_, sizeof(V));
        pos_ += sizeof(V);
        return v;
    }
    std::string get_string(const char* what) {
        const auto n = get<std::uint32_t>(what);
        need(n, what);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    template <class V>
    std::vector<V> get_array(std::size_t n, const char* what) {
        if (n > (end_ - pos_) / sizeof(V)) fail(what);
        std::vector<V> v(n);
        std::memcpy(v.data(), b_.data() + pos_, n * sizeof(V));
        pos_ += n * sizeof(V);
        return v;
    }
    std::size_t pos() const { return pos_; }
    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError(source_ + ": malformed checkpoint at byte offset " + std::to_string(pos_) + " (" + what + ")");
    }

private:
    void need(std::size_t n, const char* what) const {
        if (n > end_ - pos_) fail(std::string("truncated while reading ") + what);
    }
    const std::vector<unsigned char>& b_;
    std::size_t end_;
    std::size_t pos_ = 0;
    std::string source_;
};

}  // namespace detail

template <class T>
std::vector<unsigned char> encode_checkpoint(const TrainState<T>& st) {
    detail::ByteWriter w;
    w.bytes.insert(w.bytes.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    w.put(kCheckpointVersion);
    w.put(static_cast<std::uint8_t>(sizeof(T)));
    w.put_string(nlohmann::json{{"network", st.net}, {"train", st.train}, {"phase", st.phase}}.dump());
    w.put(static_cast<std::uint64_t>(st.step));
    w.put(static_cast<std::uint64_t>(st.adam.t));
    w.put_string(st.rng.serialize());
    w.put(static_cast<std::uint32_t>(st.params.entries().size()));
    for (const auto& [name, e] : st.params.entries()) {
        w.put_string(name);
        w.put(static_cast<std::uint8_t>(e.trainable));
        w.put(static_cast<std::uint32_t>(e.tensor.rank()));
        for (auto d : e.tensor.shape()) w.put(static_cast<std::uint64_t>(d));
        w.put_array(e.tensor.data());
        auto m = st.adam.m.find(name);
        auto v = st.adam.v.find(name);
        const bool moments = m != st.adam.m.end() && v != st.adam.v.end();
        w.put(static_cast<std::uint8_t>(moments));
        if (moments) {
            w.put_array(m->second);
            w.put_array(v->second);
        }
    }
    const auto crc = static_cast<std::uint32_t>(::crc32(0L, w.bytes.data(), static_cast<uInt>(w.bytes.size())));
    w.put(crc);
    return std::move(w.bytes);
}

/// Element width recorded in a checkpoint (4 or 8), for precision dispatch.
inline std::size_t checkpoint_element_size(const std::vector<unsigned char>& bytes, const std::string& source = "checkpoint") {
    if (bytes.size() < 13 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
        throw FormatError(source + ": not a checkpoint file (bad magic)");
    return bytes[12];
}

template <class T>
TrainState<T> decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& source = "checkpoint") {
    if (bytes.size() < 8 + 4 + 1 + 4 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
        throw FormatError(source + ": not a checkpoint file (bad magic)");
    const std::size_t body = bytes.size() - 4;
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + body, 4);
    const auto computed = static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(body)));
    if (stored != computed)
        throw ChecksumError(source + ": checksum mismatch over bytes [0, " + std::to_string(body) + ") (stored " +
                            std::to_string(stored) + ", computed " + std::to_string(computed) + ")");

    detail::ByteReader r(bytes, body, source);
    r.get_array<char>(8, "magic");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw FormatError(source + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    const auto width = r.get<std::uint8_t>("element width");
    if (width != sizeof(T))
        throw FormatError(source + ": checkpoint stores " + std::to_string(8 * width) + "-bit values, requested " +
                          std::to_string(8 * sizeof(T)) + "-bit");
    TrainState<T> st;
    {
        const std::string text = r.get_string("config");
        try {
            const auto j = nlohmann::json::parse(text);
            st.net = j.at("network").get<NetworkConfig>();
            st.train = j.at("train").get<TrainConfig>();
            st.phase = j.at("phase").get<std::string>();
        } catch (const nlohmann::json::exception& ex) {
            r.fail(std::string("config: ") + ex.what());
        }
    }
    st.step = r.get<std::uint64_t>("step");
    st.adam.t = r.get<std::uint64_t>("optimizer step");
    st.rng.deserialize(r.get_string("rng state"));
    const auto count = r.get<std::uint32_t>("parameter count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.get_string("parameter name");
        const bool trainable = r.get<std::uint8_t>("trainable flag") != 0;
        const auto rank = r.get<std::uint32_t>("rank");
        if (rank > 8) r.fail("rank " + std::to_string(rank) + " for " + name);
        Shape shape;
        for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.get<std::uint64_t>("dimension"));
        const std::size_t n = shape_numel(shape);
        st.params.add(name, Tensor<T>(shape, r.get_array<T>(n, "parameter data")), trainable);
        if (r.get<std::uint8_t>("moment flag")) {
            st.adam.m[name] = r.get_array<T>(n, "first moment");
            st.adam.v[name] = r.get_array<T>(n, "second moment");
        }
    }
    if (r.pos() != body) r.fail("trailing bytes");
    return st;
}

template <class T>
void save_checkpoint(const TrainState<T>& st, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(st);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot write checkpoint " + tmp);
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("write failed for " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(f), {});
}

template <class T>
TrainState<T> load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint<T>(read_file_bytes(path), path.string());
}

template <class T>
bool states_equal(const TrainState<T>& a, const TrainState<T>& b) {
    return encode_checkpoint(a) == encode_checkpoint(b);
}

}  // namespace tatt
