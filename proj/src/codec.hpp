#pragma once

// Token vocabulary and the bidirectional codec between floor plans and token
// sequences. Layout of a full sequence:
//
//   BOS, prompt words..., SEP, [TYPE, ORD, VAL_cx, VAL_cy, VAL_h, VAL_w, END_ROOM]..., EOS

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "geometry.hpp"

namespace roomseq {

using TokenId = int;
using TokenSequence = std::vector<TokenId>;

enum class TokenKind { Special, RoomType, Ordinal, Value, Word };

inline constexpr int kNumValues = kGridSize;
inline constexpr int kRecordLength = 7;

// Fixed ids of the special, room-type, ordinal and value blocks.
namespace tok {
inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kSep = 2;
inline constexpr TokenId kEndRoom = 3;
inline constexpr TokenId kPad = 4;
inline constexpr TokenId kUnk = 5;
inline constexpr int kNumSpecial = 6;
inline constexpr TokenId kTypeBase = kNumSpecial;
inline constexpr TokenId kOrdinalBase = kTypeBase + kNumRoomTypes;
inline constexpr TokenId kValueBase = kOrdinalBase + kMaxOrdinal;
inline constexpr TokenId kWordBase = kValueBase + kNumValues;

inline constexpr TokenId type_token(RoomType t) { return kTypeBase + static_cast<int>(t); }
inline constexpr TokenId ordinal_token(int ordinal) { return kOrdinalBase + ordinal - 1; }
inline constexpr TokenId value_token(int v) { return kValueBase + v; }
}  // namespace tok

// Position inside a 7-token room record.
enum class RecordSlot { Type = 0, Ordinal, X, Y, H, W, EndRoom };

inline RecordSlot slot_at(int index_in_record) {
  return static_cast<RecordSlot>(index_in_record % kRecordLength);
}

class Vocabulary {
 public:
  static constexpr std::string_view kHeader = "#roomseq-vocab v1";

  // Vocabulary of the current prompt grammar.
  static const Vocabulary& standard();

  explicit Vocabulary(std::vector<std::string> words);

  static Vocabulary from_text(const std::string& text);
  static Vocabulary load(const std::string& path);
  std::string to_text() const;
  void save(const std::string& path) const;

  int size() const { return static_cast<int>(strings_.size()); }
  const std::string& to_string(TokenId id) const;
  std::optional<TokenId> to_id(std::string_view s) const;
  TokenKind kind(TokenId id) const;

  // FNV-1a 64 over to_text().
  std::uint64_t hash() const { return hash_; }

 private:
  std::vector<std::string> strings_;
  std::unordered_map<std::string, TokenId> index_;
  std::uint64_t hash_ = 0;
};

TokenKind token_kind(TokenId id, int vocab_size);

// Plan-only sequence: [BOS, SEP, records..., EOS]. Throws CoordinateOutOfRange.
TokenSequence encode_plan(const FloorPlan& plan);

// Appends the 7-token record of one room.
void append_room_record(TokenSequence& seq, const Room& room);

// [BOS, prompt..., SEP, records...] without EOS, the decoding prefix.
TokenSequence encode_prefix(const std::vector<TokenId>& prompt, const std::vector<Room>& rooms);

// [BOS, prompt..., SEP, records..., EOS].
TokenSequence encode_example(const std::vector<TokenId>& prompt, const FloorPlan& plan);

enum class DecodeMode { Strict, Lenient };

// Strict throws MalformedSequence on any deviation from the layout. Lenient
// keeps every complete record before the first malformed or truncated one.
FloorPlan decode_tokens(const TokenSequence& tokens, DecodeMode mode = DecodeMode::Strict,
                        const Outline& outline = {});

// Position of SEP, or nullopt.
std::optional<std::size_t> find_separator(const TokenSequence& tokens);

// Checks that every position after SEP carries the token kind its record slot
// requires. Returns a description of the first violation.
std::optional<std::string> check_kind_discipline(const TokenSequence& tokens, int vocab_size);

// Lowercase, split on whitespace and punctuation, map to WORD ids or UNK.
std::vector<TokenId> encode_prompt(std::string_view text,
                                   const Vocabulary& vocab = Vocabulary::standard());

// Lowercase word list without lookup.
std::vector<std::string> split_words(std::string_view text);

// One line per room, each terminated by '\n':
// "[<name>: x coordinate=<cx> | y coordinate=<cy> | height=<h> | width=<w>]"
std::string render_textual(const FloorPlan& plan);

}  // namespace roomseq
