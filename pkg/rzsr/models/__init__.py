# Domain records and report DTOs
