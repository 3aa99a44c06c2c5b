#include "encbridge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace encbridge {

namespace {

constexpr char kMagic[8] = {'E', 'N', 'C', 'B', 'R', 'C', 'K', '1'};
constexpr const char* kLossRecord = "train/loss_history";

class Writer {
   public:
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void bytes(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_.insert(out_.end(), s.begin(), s.end());
    }
    void raw(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
    void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
    std::vector<std::uint8_t> take() { return std::move(out_); }

   private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> out_;
};

class Reader {
   public:
    explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
    std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(get(4, what)); }
    std::uint64_t u64(const char* what) { return get(8, what); }
    std::string bytes(const char* what) {
        const std::uint32_t n = u32(what);
        need(n, what);
        std::string s(in_.begin() + pos_, in_.begin() + pos_ + n);
        pos_ += n;
        return s;
    }
    void expect(const char* p, std::size_t n, const char* what) {
        need(n, what);
        if (std::memcmp(in_.data() + pos_, p, n) != 0) throw CheckpointError(std::string("bad ") + what);
        pos_ += n;
    }
    float f32_at(std::size_t byte_offset) const {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[byte_offset + i]) << (8 * i);
        return std::bit_cast<float>(v);
    }
    std::size_t pos() const { return pos_; }
    std::size_t size() const { return in_.size(); }

   private:
    void need(std::size_t n, const char* what) const {
        if (in_.size() - pos_ < n) throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
    }
    std::uint64_t get(int n, const char* what) {
        need(static_cast<std::size_t>(n), what);
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
        pos_ += n;
        return v;
    }
    const std::vector<std::uint8_t>& in_;
    std::size_t pos_ = 0;
};

struct Record {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

}  // namespace

Checkpoint Checkpoint::from_model(const Model<float>& model) {
    Checkpoint c;
    c.model_config = model.config();
    for (const auto& [name, t] : model.params()) c.params.emplace(name, t.clone());
    return c;
}

Model<float> Checkpoint::to_model() const {
    Model<float> model(model_config);
    for (auto& [name, t] : model.params()) {
        auto it = params.find(name);
        if (it == params.end()) throw CheckpointError("checkpoint is missing parameter record '" + name + "'");
        if (it->second.shape() != t.shape())
            throw CheckpointError("parameter record '" + name + "' has shape " + shape_str(it->second.shape()) +
                                  ", model expects " + shape_str(t.shape()));
        std::copy(it->second.data().begin(), it->second.data().end(), t.data().begin());
    }
    for (const auto& [name, _] : params)
        if (!model.params().count(name))
            throw CheckpointError("parameter record '" + name + "' does not belong to the model");
    return model;
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
    std::vector<Record> records;
    auto add_map = [&](const std::map<std::string, Tensor<float>>& m, const std::string& prefix) {
        for (const auto& [name, t] : m)
            records.push_back({prefix + name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
    };
    add_map(params, "");
    add_map(adam_m, "adam.m/");
    add_map(adam_v, "adam.v/");
    records.push_back({kLossRecord, {loss_history.size()}, loss_history});

    Writer w;
    w.raw(kMagic, sizeof kMagic);
    w.u64(step);
    w.bytes(model_config.to_text() + train_config);
    w.bytes(vocab_text);
    w.u32(static_cast<std::uint32_t>(records.size()));
    std::uint64_t offset = 0;
    for (const auto& r : records) {
        w.bytes(r.name);
        w.u32(static_cast<std::uint32_t>(r.shape.size()));
        for (auto d : r.shape) w.u64(d);
        w.u64(offset);
        offset += r.values.size();
    }
    w.u64(offset);
    for (const auto& r : records)
        for (float f : r.values) w.f32(f);
    return w.take();
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    r.expect(kMagic, sizeof kMagic, "magic header");
    Checkpoint c;
    c.step = r.u64("step counter");
    const std::string config = r.bytes("config");
    try {
        c.model_config = ModelConfig::from_text(config);
        c.model_config.validate();
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(std::string("checkpoint config: ") + e.what());
    }
    // Lines after the model keys belong to the training snapshot.
    const auto model_text = c.model_config.to_text();
    c.train_config = config.compare(0, model_text.size(), model_text) == 0 ? config.substr(model_text.size()) : config;
    c.vocab_text = r.bytes("vocab");

    const std::uint32_t count = r.u32("record count");
    struct Header {
        std::string name;
        Shape shape;
        std::uint64_t offset;
    };
    std::vector<Header> headers;
    for (std::uint32_t i = 0; i < count; ++i) {
        Header h;
        h.name = r.bytes("record name");
        const std::uint32_t rank = r.u32("record rank");
        if (rank > 8) throw CheckpointError("parameter record '" + h.name + "' has implausible rank");
        for (std::uint32_t k = 0; k < rank; ++k) h.shape.push_back(r.u64("record dims"));
        h.offset = r.u64("record offset");
        headers.push_back(std::move(h));
    }
    const std::uint64_t total = r.u64("payload size");
    const std::size_t payload_start = r.pos();
    if (bytes.size() - payload_start != total * 4)
        throw CheckpointError("payload holds " + std::to_string((bytes.size() - payload_start) / 4) +
                              " scalars, header declares " + std::to_string(total));
    for (const auto& h : headers) {
        std::uint64_t n = 1;
        for (auto d : h.shape) {
            if (d != 0 && n > total / d) throw CheckpointError("parameter record '" + h.name + "' is oversized");
            n *= d;
        }
        if (h.offset > total || n > total - h.offset)
            throw CheckpointError("parameter record '" + h.name + "' points outside the payload");
        std::vector<float> values(n);
        for (std::uint64_t i = 0; i < n; ++i) values[i] = r.f32_at(payload_start + 4 * (h.offset + i));
        if (h.name == kLossRecord) {
            c.loss_history = std::move(values);
            continue;
        }
        Tensor<float> t(h.shape, std::move(values));
        std::map<std::string, Tensor<float>>* target = &c.params;
        std::string name = h.name;
        if (name.rfind("adam.m/", 0) == 0) {
            target = &c.adam_m;
            name = name.substr(7);
        } else if (name.rfind("adam.v/", 0) == 0) {
            target = &c.adam_v;
            name = name.substr(7);
        }
        if (!target->emplace(name, std::move(t)).second)
            throw CheckpointError("duplicate parameter record '" + h.name + "'");
    }
    return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot write checkpoint " + path.string());
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot read checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace encbridge
