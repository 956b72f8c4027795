# relembed app package
