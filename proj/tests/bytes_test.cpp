#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "pohar/bytes.hpp"

using pohar::ByteReader;
using pohar::ByteWriter;
using pohar::DecodeError;

TEST(Bytes, IntegersAreBigEndian) {
  ByteWriter w;
  w.u16(0x0102);
  w.u32(0x03040506);
  w.u64(0x0708090A0B0C0D0Eull);
  const auto& b = w.bytes();
  ASSERT_EQ(b.size(), 14u);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(b[i], i + 1);
}

TEST(Bytes, RoundTrip) {
  ByteWriter w;
  w.u8(7);
  w.u16(65535);
  w.u32(123456789);
  w.u64(std::numeric_limits<std::uint64_t>::max());
  w.f64(-0.1);
  w.f64(std::numeric_limits<double>::infinity());
  w.str16("sensor");
  ByteReader r(w.bytes());
  EXPECT_EQ(r.u8(), 7);
  EXPECT_EQ(r.u16(), 65535);
  EXPECT_EQ(r.u32(), 123456789u);
  EXPECT_EQ(r.u64(), std::numeric_limits<std::uint64_t>::max());
  EXPECT_EQ(r.f64(), -0.1);
  EXPECT_TRUE(std::isinf(r.f64()));
  EXPECT_EQ(r.str16(), "sensor");
  EXPECT_TRUE(r.done());
  EXPECT_NO_THROW(r.expect_done("buffer"));
}

TEST(Bytes, UnderrunThrows) {
  ByteWriter w;
  w.u16(3);
  ByteReader r(w.bytes());
  EXPECT_THROW(r.u32(), DecodeError);

  ByteWriter s;
  s.u16(10);  // claims 10 bytes of string
  s.u8('x');
  ByteReader rs(s.bytes());
  EXPECT_THROW(rs.str16(), DecodeError);
}

TEST(Bytes, TrailingBytesRejected) {
  ByteWriter w;
  w.u8(1);
  w.u8(2);
  ByteReader r(w.bytes());
  r.u8();
  EXPECT_THROW(r.expect_done("test"), DecodeError);
}
