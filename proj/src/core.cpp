#include "geom/core.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

namespace geom {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_config: return "invalid-config";
    case Errc::invalid_size: return "invalid-size";
    case Errc::too_large: return "too-large";
    case Errc::out_of_memory: return "out-of-memory";
    case Errc::invalid_free: return "invalid-free";
    case Errc::invalid_handle: return "invalid-handle";
    case Errc::trap: return "trap";
    case Errc::out_of_bounds: return "out-of-bounds";
    case Errc::unbacked: return "unbacked";
    case Errc::backing_failure: return "backing-failure";
    case Errc::structural: return "structural";
    case Errc::parse: return "parse";
  }
  return "unknown";
}

void GeometryConfig::validate() const {
  if (height_bits < 0 || height_bits > 48 || min_level < 0 || min_level > height_bits ||
      counter_bits < 1 || counter_bits > 16) {
    std::ostringstream os;
    os << "invalid geometry n=" << height_bits << " m=" << min_level << " w=" << counter_bits;
    throw GeomError(Errc::invalid_config, os.str());
  }
}

std::string hex(Address a) {
  std::ostringstream os;
  os << std::uppercase << std::hex << a;
  return os.str();
}

NicheMap combine_niche_maps(const NicheMap* left, const NicheMap* right, int child_level,
                            const GeometryConfig& config) {
  if (left == nullptr && right == nullptr) {
    throw GeomError(Errc::structural, "interior node with both children missing");
  }
  const auto len = static_cast<std::size_t>(config.map_length(child_level));
  for (const NicheMap* m : {left, right}) {
    if (m != nullptr && m->size() != len) {
      throw GeomError(Errc::structural, "child niche map has wrong length");
    }
  }
  const std::uint32_t cap = config.counter_max();
  NicheMap out;
  out.reserve(len + 1);
  out.push_back((left == nullptr || right == nullptr) ? 1 : 0);
  for (std::size_t i = 0; i < len; ++i) {
    std::uint64_t sum = 0;
    if (left != nullptr) sum += (*left)[i];
    if (right != nullptr) sum += (*right)[i];
    out.push_back(static_cast<std::uint32_t>(std::min<std::uint64_t>(sum, cap)));
  }
  return out;
}

BlockTree::BlockTree(GeometryConfig config, TreeKind kind)
    : config_(config), kind_(kind) {
  config_.validate();
  levels_.resize(static_cast<std::size_t>(config_.height_bits) + 1);
}

void BlockTree::check_id(const BlockId& id) const {
  if (id.level < config_.min_level || id.level > config_.height_bits ||
      id.index >= (Address{1} << (config_.height_bits - id.level))) {
    std::ostringstream os;
    os << "block L" << id.level << " I" << id.index << " outside geometry";
    throw GeomError(Errc::structural, os.str());
  }
}

NicheMap BlockTree::root_map() const {
  if (const Node* r = find(root_id())) return r->map;
  return NicheMap(static_cast<std::size_t>(config_.map_length(config_.height_bits)), 0);
}

const Node* BlockTree::find(const BlockId& id) const {
  if (id.level < config_.min_level || id.level > config_.height_bits) return nullptr;
  const auto& store = levels_[static_cast<std::size_t>(id.level)];
  auto it = store.find(id.index);
  return it == store.end() ? nullptr : &it->second;
}

Node* BlockTree::find(const BlockId& id) {
  return const_cast<Node*>(std::as_const(*this).find(id));
}

Node& BlockTree::put(const BlockId& id, Node node) {
  check_id(id);
  auto& slot = levels_[static_cast<std::size_t>(id.level)][id.index];
  slot = std::move(node);
  return slot;
}

void BlockTree::erase(const BlockId& id) {
  check_id(id);
  levels_[static_cast<std::size_t>(id.level)].erase(id.index);
}

Node BlockTree::make_leaf(int level) const {
  Node n;
  n.leaf = true;
  n.full = true;
  n.map.assign(static_cast<std::size_t>(config_.map_length(level)), 0);
  return n;
}

void BlockTree::refresh(const BlockId& id) {
  Node* node = find(id);
  if (node == nullptr || node->leaf) return;
  const Node* l = find(id.child(false));
  const Node* r = find(id.child(true));
  node->has_left = l != nullptr;
  node->has_right = r != nullptr;
  node->full = l != nullptr && r != nullptr && l->full && r->full;
  node->map = combine_niche_maps(l ? &l->map : nullptr, r ? &r->map : nullptr, id.level - 1,
                                 config_);
}

void BlockTree::refresh_ancestors(const BlockId& id) {
  for (BlockId cur = id; cur.level < config_.height_bits;) {
    cur = cur.parent();
    refresh(cur);
  }
}

std::vector<BlockId> BlockTree::niches() const {
  std::vector<BlockId> out;
  if (empty()) {
    out.push_back(root_id());
    return out;
  }
  for (int l = config_.height_bits; l > config_.min_level; --l) {
    for (const auto& [idx, node] : levels_[static_cast<std::size_t>(l)]) {
      if (node.leaf) continue;
      BlockId id{l, idx};
      if (!node.has_left) out.push_back(id.child(false));
      if (!node.has_right) out.push_back(id.child(true));
    }
  }
  std::sort(out.begin(), out.end(), [](const BlockId& a, const BlockId& b) {
    return a.base() != b.base() ? a.base() < b.base() : a.level > b.level;
  });
  return out;
}

std::vector<BlockId> BlockTree::leaves() const {
  std::vector<BlockId> out;
  for (int l = config_.height_bits; l >= config_.min_level; --l) {
    for (const auto& [idx, node] : levels_[static_cast<std::size_t>(l)]) {
      if (node.leaf) out.push_back({l, idx});
    }
  }
  std::sort(out.begin(), out.end(),
            [](const BlockId& a, const BlockId& b) { return a.base() < b.base(); });
  return out;
}

std::size_t BlockTree::node_count() const {
  std::size_t n = 0;
  for (const auto& s : levels_) n += s.size();
  return n;
}

namespace {

[[noreturn]] void structural(const BlockId& id, const std::string& what) {
  std::ostringstream os;
  os << "L" << id.level << " I" << id.index << ": " << what;
  throw GeomError(Errc::structural, os.str());
}

}  // namespace

void BlockTree::validate() const {
  for (int l = config_.height_bits; l >= config_.min_level; --l) {
    for (const auto& [idx, node] : levels_[static_cast<std::size_t>(l)]) {
      const BlockId id{l, idx};
      check_id(id);
      if (l < config_.height_bits && !contains(id.parent())) structural(id, "orphan node");
      if (node.map.size() != static_cast<std::size_t>(config_.map_length(l))) {
        structural(id, "niche map length");
      }
      const bool virt = kind_ == TreeKind::virtual_space;
      if (node.leaf) {
        if (l > config_.min_level && (contains(id.child(false)) || contains(id.child(true)))) {
          structural(id, "leaf with children");
        }
        if (std::any_of(node.map.begin(), node.map.end(), [](auto c) { return c != 0; })) {
          structural(id, "leaf niche map not all-zero");
        }
        if (!node.full) structural(id, "leaf without full bit");
        if (virt != node.backing.has_value()) structural(id, "leaf backing mismatch");
        continue;
      }
      if (l == config_.min_level) structural(id, "interior node at minimum level");
      const Node* left = find(id.child(false));
      const Node* right = find(id.child(true));
      if (node.has_left != (left != nullptr) || node.has_right != (right != nullptr)) {
        structural(id, "child flags out of sync");
      }
      if (left == nullptr && right == nullptr) structural(id, "both children missing");
      if (node.map != combine_niche_maps(left ? &left->map : nullptr,
                                         right ? &right->map : nullptr, l - 1, config_)) {
        structural(id, "niche map violates combine rule");
      }
      const bool full = left && right && left->full && right->full;
      if (node.full != full) structural(id, "full bit unsound");
      if (node.backing) structural(id, "interior node with backing");
    }
  }
}

std::string BlockTree::serialize() const {
  std::ostringstream os;
  os << "geomtree v1 n=" << config_.height_bits << " m=" << config_.min_level
     << " w=" << config_.counter_bits << "\n";
  for (int l = config_.height_bits; l >= config_.min_level; --l) {
    for (const auto& [idx, node] : levels_[static_cast<std::size_t>(l)]) {
      os << "L" << l << " I" << idx << (node.leaf ? " leaf" : " int") << " map=[";
      for (std::size_t i = 0; i < node.map.size(); ++i) os << (i ? "," : "") << node.map[i];
      os << "]";
      if (kind_ == TreeKind::virtual_space) {
        os << " full=" << (node.full ? 1 : 0) << " back=";
        if (node.backing) {
          os << *node.backing;
        } else {
          os << "-";
        }
      }
      os << "\n";
    }
  }
  return os.str();
}

namespace {

[[noreturn]] void parse_error(std::size_t line, const std::string& what) {
  throw GeomError(Errc::parse, "line " + std::to_string(line) + ": " + what);
}

template <typename T>
T parse_num(std::string_view s, std::size_t line) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) parse_error(line, "bad number '" + std::string(s) + "'");
  return v;
}

std::string_view after_prefix(std::string_view tok, std::string_view prefix, std::size_t line) {
  if (tok.substr(0, prefix.size()) != prefix) {
    parse_error(line, "expected '" + std::string(prefix) + "'");
  }
  return tok.substr(prefix.size());
}

}  // namespace

BlockTree BlockTree::deserialize(std::string_view text, std::optional<TreeKind> kind) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) parse_error(lineno, "missing header");
  GeometryConfig cfg;
  {
    std::istringstream hs(line);
    std::string magic, ver, n, m, w;
    hs >> magic >> ver >> n >> m >> w;
    if (magic != "geomtree" || ver != "v1") parse_error(lineno, "bad header");
    cfg.height_bits = parse_num<int>(after_prefix(n, "n=", lineno), lineno);
    cfg.min_level = parse_num<int>(after_prefix(m, "m=", lineno), lineno);
    cfg.counter_bits = parse_num<int>(after_prefix(w, "w=", lineno), lineno);
  }
  struct Parsed {
    BlockId id;
    Node node;
  };
  std::vector<Parsed> nodes;
  bool saw_payload = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> toks;
    for (std::string t; ls >> t;) toks.push_back(t);
    if (toks.size() != 4 && toks.size() != 6) parse_error(lineno, "expected 4 or 6 fields");
    Parsed p;
    p.id.level = parse_num<int>(after_prefix(toks[0], "L", lineno), lineno);
    p.id.index = parse_num<std::uint64_t>(after_prefix(toks[1], "I", lineno), lineno);
    if (toks[2] == "leaf") {
      p.node.leaf = true;
    } else if (toks[2] != "int") {
      parse_error(lineno, "expected leaf|int");
    }
    std::string_view m = after_prefix(toks[3], "map=[", lineno);
    if (m.empty() || m.back() != ']') parse_error(lineno, "unterminated map");
    m.remove_suffix(1);
    while (!m.empty()) {
      auto comma = m.find(',');
      p.node.map.push_back(parse_num<std::uint32_t>(m.substr(0, comma), lineno));
      m = comma == std::string_view::npos ? std::string_view{} : m.substr(comma + 1);
    }
    if (toks.size() == 6) {
      saw_payload = true;
      auto full = after_prefix(toks[4], "full=", lineno);
      if (full != "0" && full != "1") parse_error(lineno, "bad full bit");
      p.node.full = full == "1";
      auto back = after_prefix(toks[5], "back=", lineno);
      if (back != "-") p.node.backing = parse_num<Address>(back, lineno);
    } else {
      p.node.full = p.node.leaf;
    }
    nodes.push_back(std::move(p));
  }
  const TreeKind k = kind.value_or(saw_payload ? TreeKind::virtual_space : TreeKind::real);
  BlockTree tree(cfg, k);
  for (auto& p : nodes) {
    if (tree.contains(p.id)) throw GeomError(Errc::parse, "duplicate node");
    tree.put(p.id, std::move(p.node));
  }
  // Child flags are implied by the node set; real trees carry no full bits
  // on disk, so those are derived bottom-up as well.
  for (int l = cfg.min_level + 1; l <= cfg.height_bits; ++l) {
    for (auto& [idx, node] : tree.levels_[static_cast<std::size_t>(l)]) {
      if (node.leaf) continue;
      const Node* left = tree.find(BlockId{l, idx}.child(false));
      const Node* right = tree.find(BlockId{l, idx}.child(true));
      node.has_left = left != nullptr;
      node.has_right = right != nullptr;
      if (!saw_payload) node.full = left && right && left->full && right->full;
    }
  }
  tree.validate();
  return tree;
}

std::vector<std::uint64_t> true_niche_counts(const BlockTree& tree, const BlockId& node) {
  const auto& cfg = tree.config();
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(cfg.map_length(node.level)), 0);
  if (!tree.contains(node)) {
    throw GeomError(Errc::structural, "true_niche_counts on a missing node");
  }
  std::vector<BlockId> stack{node};
  while (!stack.empty()) {
    const BlockId cur = stack.back();
    stack.pop_back();
    const Node* n = tree.find(cur);
    if (n->leaf) continue;
    for (bool right : {false, true}) {
      const BlockId c = cur.child(right);
      if (tree.contains(c)) {
        stack.push_back(c);
      } else {
        ++counts[map_slot(node.level, c.level)];
      }
    }
  }
  return counts;
}

}  // namespace geom
