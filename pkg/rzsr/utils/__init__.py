# Image operations and file formats
