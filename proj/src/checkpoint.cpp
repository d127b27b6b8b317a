#include "gasca/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <sstream>

namespace gasca {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

const char kMagic[4] = {'G', 'A', 'S', 'C'};

template <class T>
void put(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view b) : b_(b) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string_view s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n)
      throw ParseError("checkpoint truncated at byte " + std::to_string(pos_) + " reading " + what);
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::string_view bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t left = bytes.size();
  while (left > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(left, std::numeric_limits<uInt>::max()));
    c = crc32(c, p, chunk);
    p += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  if (tensors.size() > std::numeric_limits<std::uint32_t>::max()) throw ContractError("too many tensors");
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const NamedTensor& t : tensors) {
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max())
      throw ContractError("tensor name too long: " + t.name.substr(0, 32) + "...");
    if (t.value.rank() > std::numeric_limits<std::uint8_t>::max()) throw ContractError("tensor rank too large");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.value.rank()));
    for (std::size_t d : t.value.shape()) {
      if (d > std::numeric_limits<std::uint32_t>::max()) throw ContractError("tensor dimension too large");
      put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    const auto data = t.value.data();
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
  }
  put<std::uint32_t>(out, crc32_of(out));
  return out;
}

std::vector<NamedTensor> decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 16) throw ParseError("checkpoint too short (" + std::to_string(bytes.size()) + " bytes)");
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  const std::uint32_t actual = crc32_of(body);
  if (stored != actual) {
    std::ostringstream os;
    os << "corrupt checkpoint: CRC32 mismatch (stored " << std::hex << stored << ", computed " << actual << ")";
    throw CorruptCheckpointError(os.str());
  }
  Reader r(body);
  if (r.bytes(4, "magic") != std::string_view(kMagic, 4)) throw ParseError("not a GASC checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>("tensor count");
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto len = r.get<std::uint16_t>("name length");
    t.name = std::string(r.bytes(len, "name"));
    const auto rank = r.get<std::uint8_t>("rank");
    if (rank == 0) throw ParseError("tensor '" + t.name + "' has rank 0");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.get<std::uint32_t>("dimension");
      if (d == 0) throw ParseError("tensor '" + t.name + "' has a zero dimension");
      if (n > body.size() / d) throw ParseError("tensor '" + t.name + "' is larger than the file");
      n *= d;
    }
    const std::string_view raw = r.bytes(n * sizeof(double), "tensor data");
    std::vector<double> data(n);
    std::memcpy(data.data(), raw.data(), raw.size());
    t.value = Tensor(std::move(shape), std::move(data));
    out.push_back(std::move(t));
  }
  if (r.pos() != body.size())
    throw ParseError("checkpoint has " + std::to_string(body.size() - r.pos()) + " trailing bytes");
  return out;
}

void save_checkpoint(const std::vector<NamedTensor>& tensors, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(tensors);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

// --- model (de)serialization -----------------------------------------------

namespace {

Tensor vec(const std::vector<double>& v) { return Tensor({v.size()}, v); }

void export_layers(std::vector<NamedTensor>& out, const std::string& prefix,
                   const std::vector<std::unique_ptr<Layer>>& layers) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = prefix + "." + std::to_string(i);
    out.push_back({p + ".arch", vec(layers[i]->descriptor())});
    for (const ad::Parameter* q : std::as_const(*layers[i]).parameters()) out.push_back({p + "." + q->name, q->value});
  }
}

class Index {
 public:
  explicit Index(const std::vector<NamedTensor>& t) {
    for (const NamedTensor& n : t) map_.emplace(n.name, &n.value);
  }
  bool has(const std::string& name) const { return map_.count(name) != 0; }
  const Tensor& at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw ParseError("checkpoint lacks tensor '" + name + "'");
    return *it->second;
  }
  double scalar(const std::string& name) const {
    const Tensor& t = at(name);
    if (t.size() != 1) throw ParseError("checkpoint tensor '" + name + "' must hold one value");
    return t[0];
  }

  std::unique_ptr<Layer> layer(const std::string& p) const {
    const Tensor& arch = at(p + ".arch");
    std::unique_ptr<Layer> l;
    try {
      l = make_layer(arch.storage());
    } catch (const ConfigError& e) {
      throw ParseError("checkpoint layer '" + p + "': " + e.what());
    }
    for (ad::Parameter* q : l->parameters()) {
      const Tensor& v = at(p + "." + q->name);
      if (v.shape() != q->value.shape())
        throw ParseError("checkpoint tensor '" + p + "." + q->name + "' has shape " + shape_string(v.shape()) +
                         ", expected " + shape_string(q->value.shape()));
      q->value = v;
    }
    return l;
  }
  std::vector<std::unique_ptr<Layer>> layers(const std::string& prefix) const {
    std::vector<std::unique_ptr<Layer>> out;
    while (has(prefix + "." + std::to_string(out.size()) + ".arch"))
      out.push_back(layer(prefix + "." + std::to_string(out.size())));
    return out;
  }

 private:
  std::map<std::string, const Tensor*> map_;
};

std::unique_ptr<Dense> as_dense(std::unique_ptr<Layer> l, const std::string& name) {
  if (!l || l->kind() != LayerKind::Dense) throw ParseError("checkpoint layer '" + name + "' is not Dense");
  return std::unique_ptr<Dense>(static_cast<Dense*>(l.release()));
}

}  // namespace

CheckpointKind checkpoint_kind(const std::vector<NamedTensor>& tensors) {
  const double k = Index(tensors).scalar("meta.kind");
  if (k == 1.0) return CheckpointKind::Pretrain;
  if (k == 2.0) return CheckpointKind::Classifier;
  throw ParseError("unknown checkpoint kind " + std::to_string(k));
}

std::vector<NamedTensor> export_state(const GanglwState& s) {
  std::vector<NamedTensor> out;
  out.push_back({"meta.kind", Tensor::scalar(double(CheckpointKind::Pretrain))});
  out.push_back({"meta.stage", Tensor::scalar(static_cast<double>(s.completed))});
  export_layers(out, "G.enc", s.generator.encoders);
  export_layers(out, "G.dec", s.generator.decoders);
  const DiscriminatorStack& d = s.discriminator;
  for (std::size_t j = 0; j < d.levels.size(); ++j) {
    const std::string p = "D.level." + std::to_string(j);
    out.push_back({p + ".depth", Tensor::scalar(static_cast<double>(d.levels[j].depth))});
    export_layers(out, p + ".layer", d.levels[j].features.layers);
  }
  if (d.head) {
    std::vector<std::unique_ptr<Layer>> head;
    head.push_back(d.head->clone());
    export_layers(out, "D.head", head);
  }
  return out;
}

GanglwState import_state(const std::vector<NamedTensor>& tensors) {
  if (checkpoint_kind(tensors) != CheckpointKind::Pretrain) throw ConfigError("checkpoint is not a pretraining checkpoint");
  const Index ix(tensors);
  GanglwState s;
  s.completed = static_cast<std::size_t>(ix.scalar("meta.stage"));
  s.generator.encoders = ix.layers("G.enc");
  s.generator.decoders = ix.layers("G.dec");
  if (s.generator.encoders.size() != s.completed || s.generator.decoders.size() != s.completed)
    throw ParseError("checkpoint stage count does not match its encoder/decoder lists");
  for (std::size_t j = 0; ix.has("D.level." + std::to_string(j) + ".depth"); ++j) {
    const std::string p = "D.level." + std::to_string(j);
    DiscriminatorStack::Level lv;
    lv.depth = static_cast<std::size_t>(ix.scalar(p + ".depth"));
    lv.features.layers = ix.layers(p + ".layer");
    s.discriminator.levels.push_back(std::move(lv));
  }
  if (ix.has("D.head.0.arch")) s.discriminator.head = as_dense(ix.layer("D.head.0"), "D.head.0");
  return s;
}

std::vector<NamedTensor> export_classifier(const EmotionClassifier& clf) {
  std::vector<NamedTensor> out;
  out.push_back({"meta.kind", Tensor::scalar(double(CheckpointKind::Classifier))});
  out.push_back({"meta.classes", Tensor::scalar(static_cast<double>(clf.classes()))});
  export_layers(out, "C.enc", clf.encoders);
  std::vector<std::unique_ptr<Layer>> head;
  head.push_back(clf.head->clone());
  export_layers(out, "C.head", head);
  return out;
}

EmotionClassifier import_classifier(const std::vector<NamedTensor>& tensors) {
  if (checkpoint_kind(tensors) != CheckpointKind::Classifier) throw ConfigError("checkpoint is not a classifier checkpoint");
  const Index ix(tensors);
  EmotionClassifier clf(ix.layers("C.enc"), as_dense(ix.layer("C.head.0"), "C.head.0"));
  if (static_cast<double>(clf.classes()) != ix.scalar("meta.classes"))
    throw ParseError("checkpoint class count disagrees with its head");
  return clf;
}

}  // namespace gasca
