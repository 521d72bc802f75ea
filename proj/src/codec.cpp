#include "codec.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "error.hpp"
#include "grammar.hpp"

namespace roomseq {

namespace {

constexpr std::array<std::string_view, tok::kNumSpecial> kSpecialNames = {
    "<bos>", "<eos>", "<sep>", "<end_room>", "<pad>", "<unk>"};

std::string type_token_string(RoomType t) {
  std::string name(room_type_name(t));
  std::replace(name.begin(), name.end(), ' ', '_');
  return "TYPE_" + name;
}

std::vector<std::string> fixed_block_strings() {
  std::vector<std::string> out;
  for (auto s : kSpecialNames) out.emplace_back(s);
  for (auto t : kAllRoomTypes) out.push_back(type_token_string(t));
  for (int o = 1; o <= kMaxOrdinal; ++o) out.push_back("ORD_" + std::to_string(o));
  for (int v = 0; v < kNumValues; ++v) out.push_back("VAL_" + std::to_string(v));
  return out;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

[[noreturn]] void malformed(std::size_t pos, const std::string& what) {
  fail(ErrorCode::MalformedSequence, "position " + std::to_string(pos) + ": " + what);
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> words) {
  strings_ = fixed_block_strings();
  for (auto& w : words) strings_.push_back(std::move(w));
  for (int i = 0; i < static_cast<int>(strings_.size()); ++i) {
    const auto& s = strings_[i];
    if (s.empty() || std::any_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); }))
      fail(ErrorCode::InvalidArgument, "vocabulary entry must be a non-empty token without whitespace");
    if (!index_.emplace(s, i).second) fail(ErrorCode::InvalidArgument, "duplicate vocabulary entry: " + s);
  }
  hash_ = fnv1a(to_text());
}

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab(grammar::vocabulary_words());
  return vocab;
}

Vocabulary Vocabulary::from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kHeader)
    fail(ErrorCode::Parse, "vocabulary file must start with '" + std::string(kHeader) + "'");
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  const auto fixed = fixed_block_strings();
  if (lines.size() < fixed.size()) fail(ErrorCode::Parse, "vocabulary file is truncated");
  for (std::size_t i = 0; i < fixed.size(); ++i) {
    if (lines[i] != fixed[i]) fail(ErrorCode::Parse, "unexpected fixed token at line " + std::to_string(i + 2));
  }
  return Vocabulary(std::vector<std::string>(lines.begin() + static_cast<long>(fixed.size()), lines.end()));
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open vocabulary file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

std::string Vocabulary::to_text() const {
  std::string out(kHeader);
  out += '\n';
  for (const auto& s : strings_) {
    out += s;
    out += '\n';
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write vocabulary file: " + path);
  out << to_text();
}

const std::string& Vocabulary::to_string(TokenId id) const {
  if (id < 0 || id >= size()) fail(ErrorCode::TokenOutOfRange, "token id out of range: " + std::to_string(id));
  return strings_[id];
}

std::optional<TokenId> Vocabulary::to_id(std::string_view s) const {
  auto it = index_.find(std::string(s));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenKind Vocabulary::kind(TokenId id) const { return token_kind(id, size()); }

TokenKind token_kind(TokenId id, int vocab_size) {
  if (id < 0 || id >= vocab_size) fail(ErrorCode::TokenOutOfRange, "token id out of range: " + std::to_string(id));
  if (id < tok::kTypeBase) return TokenKind::Special;
  if (id < tok::kOrdinalBase) return TokenKind::RoomType;
  if (id < tok::kValueBase) return TokenKind::Ordinal;
  if (id < tok::kWordBase) return TokenKind::Value;
  return TokenKind::Word;
}

void append_room_record(TokenSequence& seq, const Room& room) {
  if (auto why = check_room(room)) fail(ErrorCode::InvalidArgument, *why);
  for (int v : {room.cx, room.cy, room.h, room.w}) {
    if (v < 0 || v >= kNumValues)
      fail(ErrorCode::CoordinateOutOfRange, "room field " + std::to_string(v) + " exceeds the value range");
  }
  seq.push_back(tok::type_token(room.type));
  seq.push_back(tok::ordinal_token(room.ordinal));
  seq.push_back(tok::value_token(room.cx));
  seq.push_back(tok::value_token(room.cy));
  seq.push_back(tok::value_token(room.h));
  seq.push_back(tok::value_token(room.w));
  seq.push_back(tok::kEndRoom);
}

TokenSequence encode_prefix(const std::vector<TokenId>& prompt, const std::vector<Room>& rooms) {
  TokenSequence seq;
  seq.reserve(prompt.size() + 2 + rooms.size() * kRecordLength);
  seq.push_back(tok::kBos);
  seq.insert(seq.end(), prompt.begin(), prompt.end());
  seq.push_back(tok::kSep);
  for (const auto& r : rooms) append_room_record(seq, r);
  return seq;
}

TokenSequence encode_example(const std::vector<TokenId>& prompt, const FloorPlan& plan) {
  auto seq = encode_prefix(prompt, plan.rooms);
  seq.push_back(tok::kEos);
  return seq;
}

TokenSequence encode_plan(const FloorPlan& plan) { return encode_example({}, plan); }

std::optional<std::size_t> find_separator(const TokenSequence& tokens) {
  auto it = std::find(tokens.begin(), tokens.end(), tok::kSep);
  if (it == tokens.end()) return std::nullopt;
  return static_cast<std::size_t>(it - tokens.begin());
}

FloorPlan decode_tokens(const TokenSequence& tokens, DecodeMode mode, const Outline& outline) {
  const bool strict = mode == DecodeMode::Strict;
  FloorPlan plan;
  plan.outline = outline;

  auto kind_of = [](TokenId id, std::size_t pos) {
    if (id < 0) malformed(pos, "negative token id");
    if (id >= tok::kWordBase) return TokenKind::Word;
    return token_kind(id, tok::kWordBase);
  };

  if (tokens.empty() || tokens[0] != tok::kBos) {
    if (strict) malformed(0, "expected BOS");
  }
  const auto sep = find_separator(tokens);
  if (!sep) {
    if (strict) malformed(tokens.size(), "missing SEP");
    return plan;
  }
  if (strict) {
    for (std::size_t i = 1; i < *sep; ++i) {
      auto k = kind_of(tokens[i], i);
      if (k != TokenKind::Word && tokens[i] != tok::kUnk) malformed(i, "expected a prompt word");
    }
  }

  std::size_t pos = *sep + 1;
  while (true) {
    if (pos >= tokens.size()) {
      if (strict) malformed(pos, "truncated sequence, missing EOS");
      break;
    }
    if (tokens[pos] == tok::kEos) {
      if (strict && pos + 1 != tokens.size()) malformed(pos + 1, "tokens after EOS");
      break;
    }
    if (pos + kRecordLength > tokens.size()) {
      if (strict) malformed(tokens.size(), "truncated room record");
      break;
    }
    const TokenId* rec = tokens.data() + pos;
    bool ok = kind_of(rec[0], pos) == TokenKind::RoomType &&
              kind_of(rec[1], pos + 1) == TokenKind::Ordinal &&
              kind_of(rec[2], pos + 2) == TokenKind::Value &&
              kind_of(rec[3], pos + 3) == TokenKind::Value &&
              kind_of(rec[4], pos + 4) == TokenKind::Value &&
              kind_of(rec[5], pos + 5) == TokenKind::Value && rec[6] == tok::kEndRoom;
    Room room;
    if (ok) {
      room.type = static_cast<RoomType>(rec[0] - tok::kTypeBase);
      room.ordinal = rec[1] - tok::kOrdinalBase + 1;
      room.cx = rec[2] - tok::kValueBase;
      room.cy = rec[3] - tok::kValueBase;
      room.h = rec[4] - tok::kValueBase;
      room.w = rec[5] - tok::kValueBase;
      ok = !check_room(room).has_value();
    }
    if (!ok || plan.rooms.size() >= static_cast<std::size_t>(kMaxRooms)) {
      if (strict) malformed(pos, ok ? "too many rooms" : "malformed room record");
      break;
    }
    plan.rooms.push_back(room);
    pos += kRecordLength;
  }
  return plan;
}

std::optional<std::string> check_kind_discipline(const TokenSequence& tokens, int vocab_size) {
  const auto sep = find_separator(tokens);
  if (!sep) return std::string("missing SEP");
  for (std::size_t i = *sep + 1; i < tokens.size(); ++i) {
    const TokenId t = tokens[i];
    if (t < 0 || t >= vocab_size) return "token out of range at " + std::to_string(i);
    const auto slot = slot_at(static_cast<int>(i - *sep - 1));
    const auto k = token_kind(t, vocab_size);
    bool ok = false;
    switch (slot) {
      case RecordSlot::Type: ok = k == TokenKind::RoomType || t == tok::kEos; break;
      case RecordSlot::Ordinal: ok = k == TokenKind::Ordinal; break;
      case RecordSlot::X:
      case RecordSlot::Y:
      case RecordSlot::H:
      case RecordSlot::W: ok = k == TokenKind::Value; break;
      case RecordSlot::EndRoom: ok = t == tok::kEndRoom; break;
    }
    if (!ok) return "wrong token kind at " + std::to_string(i);
    if (t == tok::kEos && i + 1 != tokens.size()) return "tokens after EOS at " + std::to_string(i + 1);
  }
  return std::nullopt;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::vector<TokenId> encode_prompt(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) {
    auto id = vocab.to_id(w);
    ids.push_back(id && *id >= tok::kWordBase ? *id : tok::kUnk);
  }
  return ids;
}

std::string render_textual(const FloorPlan& plan) {
  std::string out;
  for (const auto& r : plan.rooms) {
    out += "[" + grammar::room_display_name(r, plan) + ": x coordinate=" + std::to_string(r.cx) +
           " | y coordinate=" + std::to_string(r.cy) + " | height=" + std::to_string(r.h) +
           " | width=" + std::to_string(r.w) + "]\n";
  }
  return out;
}

}  // namespace roomseq
